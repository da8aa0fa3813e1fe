//! Schema-consistency checks and test-time filtering of predictions.

use std::collections::BTreeSet;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::background::{Schema, TypeMap};
use crate::embed::ScoredTriple;
use crate::kb::Vocabulary;

/// Outcome of a schema check. A consistent verdict carries the satisfied
/// `(domain, range)` pair unless the relation is unconstrained.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsistencyVerdict {
    pub consistent: bool,
    pub witness: Option<(String, String)>,
}

static WARNED: Mutex<BTreeSet<String>> = Mutex::new(BTreeSet::new());

fn warn_unconstrained(relation: &str) {
    if let Ok(mut w) = WARNED.lock() {
        if w.insert(relation.to_string()) {
            log::warn!("relation {relation:?} has no schema entry; treating it as unconstrained");
        }
    }
}

/// Whether `(source, relation, target)` satisfies some domain-range pair of the relation.
/// Relations absent from the schema are unconstrained.
pub fn schema_consistent(
    source: &str,
    relation: &str,
    target: &str,
    schema: &Schema,
    typemap: &TypeMap,
) -> ConsistencyVerdict {
    let Some(pairs) = schema.pairs(relation) else {
        warn_unconstrained(relation);
        return ConsistencyVerdict {
            consistent: true,
            witness: None,
        };
    };
    for (d, r) in pairs {
        if typemap.has_type(source, d) && typemap.has_type(target, r) {
            return ConsistencyVerdict {
                consistent: true,
                witness: Some((d.clone(), r.clone())),
            };
        }
    }
    ConsistencyVerdict {
        consistent: false,
        witness: None,
    }
}

/// [`schema_consistent`] for an id triple resolved through `vocab`. Unresolvable ids
/// are inconsistent.
pub fn schema_consistent_ids<V: Vocabulary + ?Sized>(
    vocab: &V,
    triple: &crate::kb::Triple,
    schema: &Schema,
    typemap: &TypeMap,
) -> ConsistencyVerdict {
    match vocab.named(triple) {
        Some(n) => schema_consistent(&n.source, &n.relation, &n.target, schema, typemap),
        None => ConsistencyVerdict {
            consistent: false,
            witness: None,
        },
    }
}

/// Removes schema-inconsistent predictions (they are relabelled none), keeping the
/// relative order of survivors. Returns the survivors and the number removed.
pub fn filter_predictions<V: Vocabulary + ?Sized>(
    preds: &[ScoredTriple],
    vocab: &V,
    schema: &Schema,
    typemap: &TypeMap,
) -> (Vec<ScoredTriple>, usize) {
    let survivors: Vec<ScoredTriple> = preds
        .iter()
        .filter(|p| schema_consistent_ids(vocab, &p.triple, schema, typemap).consistent)
        .copied()
        .collect();
    let removed = preds.len() - survivors.len();
    (survivors, removed)
}
