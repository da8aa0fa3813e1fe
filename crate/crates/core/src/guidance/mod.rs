//! Background-knowledge guidance: schema consistency for predictions and the
//! taxonomy quantification rules used to expand the knowledge base before training.

pub mod revisit;
pub mod rules;
pub mod schema;

pub use revisit::{expand_then_train, train_with_derived, ExpansionConfig, ExpansionOutcome, Revisited};
pub use rules::{expand_taxonomy, expand_taxonomy_with, merge_derived, DerivedTriple, Rule, RuleSet};
pub use schema::{filter_predictions, schema_consistent, schema_consistent_ids, ConsistencyVerdict};
