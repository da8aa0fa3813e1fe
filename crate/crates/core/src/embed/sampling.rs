//! Negative sampling by corrupting one slot of a positive triple.

use std::collections::HashSet;

use rand::Rng;

use crate::background::TypeMap;
use crate::kb::{EntityId, KnowledgeBase, Triple, Vocabulary};

/// Maximum draws per negative before giving up on it.
pub const MAX_ATTEMPTS: usize = 100;

/// Draws corrupted triples that are absent from a reference set of known triples.
///
/// Same-type draws pick a random type of the entity being replaced and then a random
/// member of that type; entities without types fall back to the full vocabulary.
#[derive(Debug, Clone)]
pub struct NegativeSampler {
    known: HashSet<Triple>,
    n_entities: u32,
    entity_types: Vec<Vec<usize>>,
    type_members: Vec<Vec<EntityId>>,
}

/// Outcome of sampling for one positive.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Negatives {
    pub triples: Vec<Triple>,
    pub exhausted: usize,
}

impl NegativeSampler {
    /// `known` is the rejection set; `vocab` fixes the entity id space.
    pub fn new(vocab: &KnowledgeBase, typemap: &TypeMap, known: HashSet<Triple>) -> Self {
        let type_names: Vec<&str> = typemap.type_names().collect();
        let type_index = |name: &str| type_names.binary_search(&name).ok();
        let mut type_members: Vec<Vec<EntityId>> = vec![Vec::new(); type_names.len()];
        let mut entity_types = Vec::with_capacity(vocab.num_entities());
        for e in vocab.entity_ids() {
            let name = vocab.entity_name(e).unwrap_or_default();
            let types: Vec<usize> = typemap.types_of(name).filter_map(type_index).collect();
            for &t in &types {
                type_members[t].push(e);
            }
            entity_types.push(types);
        }
        Self {
            known,
            n_entities: vocab.num_entities() as u32,
            entity_types,
            type_members,
        }
    }

    pub fn is_known(&self, t: &Triple) -> bool {
        self.known.contains(t)
    }

    /// Entities sharing at least one type with `e`.
    pub fn shares_type(&self, a: EntityId, b: EntityId) -> bool {
        let ta = &self.entity_types[a.index()];
        self.entity_types[b.index()].iter().any(|t| ta.contains(t))
    }

    pub fn is_typed(&self, e: EntityId) -> bool {
        !self.entity_types[e.index()].is_empty()
    }

    fn draw_entity<R: Rng>(&self, original: EntityId, same_type: bool, rng: &mut R) -> EntityId {
        if same_type {
            let types = &self.entity_types[original.index()];
            if !types.is_empty() {
                let ty = types[rng.random_range(0..types.len())];
                let members = &self.type_members[ty];
                return members[rng.random_range(0..members.len())];
            }
        }
        EntityId(rng.random_range(0..self.n_entities))
    }

    /// Draws `n_neg` negatives for `positive`: exactly `round(eta·n_neg)` from same-type
    /// entities, the rest from the full vocabulary. Each corrupts the source, or the
    /// target with probability 0.5 when `corrupt_target` is set.
    pub fn sample<R: Rng>(
        &self,
        positive: &Triple,
        n_neg: usize,
        eta: f64,
        corrupt_target: bool,
        rng: &mut R,
    ) -> Negatives {
        let n_same = (eta * n_neg as f64).round() as usize;
        let mut out = Negatives::default();
        for i in 0..n_neg {
            let same_type = i < n_same;
            let mut found = None;
            for _ in 0..MAX_ATTEMPTS {
                let target_side = corrupt_target && rng.random_bool(0.5);
                let mut cand = *positive;
                if target_side {
                    cand.target = self.draw_entity(positive.target, same_type, rng);
                } else {
                    cand.source = self.draw_entity(positive.source, same_type, rng);
                }
                if !self.known.contains(&cand) {
                    found = Some(cand);
                    break;
                }
            }
            match found {
                Some(t) => out.triples.push(t),
                None => out.exhausted += 1,
            }
        }
        out
    }
}

/// Convenience wrapper: negatives for one training triple, rejecting anything in `kb`.
pub fn sample_negatives<R: Rng>(
    kb: &KnowledgeBase,
    typemap: &TypeMap,
    triple: &Triple,
    n_neg: usize,
    eta: f64,
    corrupt_target: bool,
    rng: &mut R,
) -> Negatives {
    let sampler = NegativeSampler::new(kb, typemap, kb.triples().copied().collect());
    let neg = sampler.sample(triple, n_neg, eta, corrupt_target, rng);
    if neg.exhausted > 0 {
        log::warn!(
            "negative sampling exhausted {} of {n_neg} draws for {}",
            neg.exhausted,
            kb.display(triple)
        );
    }
    neg
}
