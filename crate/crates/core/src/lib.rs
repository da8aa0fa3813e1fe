//! Knowledge-base completion for generics tensors.
//!
//! The crate covers the whole pipeline: quantifier-labelled knowledge bases and
//! their background knowledge ([`kb`], [`background`]), holographic embeddings
//! ([`embed`]), schema and taxonomy guidance ([`guidance`]), active learning for new
//! entities ([`active`]) and annotation-efficient precision estimation ([`eval`]).

pub mod active;
pub mod background;
pub mod embed;
pub mod eval;
pub mod guidance;
pub mod kb;
pub mod predict;
pub mod split;
pub mod synth;

pub use background::{load_background, Background, BackgroundError, Schema, Taxonomy, TypeMap};
pub use kb::{
    load_kb, parse_kb, EntityId, KbError, KnowledgeBase, NamedTriple, QuantLabel, RelationId,
    Triple, Vocabulary,
};
pub use split::{split_kb, DatasetSplit};
