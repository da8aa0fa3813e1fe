//! Factorization over the knowledge base plus taxonomy-derived triples, followed by a
//! re-scoring pass that lets the model veto derivations.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::rules::{expand_taxonomy_with, DerivedTriple, RuleSet};
use crate::background::Background;
use crate::embed::{train_examples, EmbedError, EmbeddingModel, Example, ScoredTriple, TrainConfig, TrainReport};
use crate::kb::{KnowledgeBase, Triple};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExpansionConfig {
    pub rules: RuleSet,
    /// Sample weight of derived triples relative to knowledge-base triples.
    pub derived_weight: f64,
    /// Derived triples scoring below this probability after training are dropped.
    pub keep_threshold: f64,
}

impl Default for ExpansionConfig {
    fn default() -> Self {
        Self {
            rules: RuleSet::all(),
            derived_weight: 0.5,
            keep_threshold: 0.5,
        }
    }
}

/// A derived triple together with its post-training score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Revisited {
    pub derived: DerivedTriple,
    pub scored: ScoredTriple,
    pub kept: bool,
}

#[derive(Debug, Clone)]
pub struct ExpansionOutcome {
    pub model: EmbeddingModel,
    pub report: TrainReport,
    /// The knowledge base plus derived triples; its vocabulary is the model's.
    pub combined: KnowledgeBase,
    pub revisited: Vec<Revisited>,
}

impl ExpansionOutcome {
    pub fn kept(&self) -> impl Iterator<Item = &Revisited> {
        self.revisited.iter().filter(|r| r.kept)
    }
}

/// Trains on `kb ∪ derived` where derived triples carry `derived_weight`. Negatives are
/// rejected only against `kb`, so a derived triple can also be drawn as a negative and
/// acts as a contested prior rather than a hard fact.
pub fn train_with_derived(
    kb: &KnowledgeBase,
    derived: &[DerivedTriple],
    background: &Background,
    train: &TrainConfig,
    expansion: &ExpansionConfig,
) -> Result<ExpansionOutcome, EmbedError> {
    let mut combined = kb.clone();
    let mut examples: Vec<Example> = kb
        .iter()
        .map(|(t, l)| Example {
            triple: *t,
            label: l,
            weight: 1.0,
        })
        .collect();
    let mut derived_ids: Vec<Triple> = Vec::with_capacity(derived.len());
    for d in derived {
        let t = combined
            .insert_named(&d.triple, d.label)
            .map_err(|e| EmbedError::InvalidConfig(format!("derived triple collides with the knowledge base: {e}")))?;
        derived_ids.push(t);
        examples.push(Example {
            triple: t,
            label: d.label,
            weight: expansion.derived_weight,
        });
    }
    let known: HashSet<Triple> = kb.triples().copied().collect();
    let (model, report) = train_examples(&combined, &examples, known, &background.typemap, train)?;
    let revisited = derived
        .iter()
        .zip(&derived_ids)
        .map(|(d, t)| {
            let scored = model.hole_score(t)?;
            Ok(Revisited {
                derived: d.clone(),
                kept: scored.probability >= expansion.keep_threshold,
                scored,
            })
        })
        .collect::<Result<Vec<_>, EmbedError>>()?;
    Ok(ExpansionOutcome {
        model,
        report,
        combined,
        revisited,
    })
}

/// Expands `kb` with the taxonomy rules, trains on the union and revisits every
/// derived triple. With no derivations this is exactly plain training.
pub fn expand_then_train(
    kb: &KnowledgeBase,
    background: &Background,
    train: &TrainConfig,
    expansion: &ExpansionConfig,
) -> Result<ExpansionOutcome, EmbedError> {
    let derived = expand_taxonomy_with(kb, &background.taxonomy, &expansion.rules);
    log::info!("taxonomy expansion derived {} triples", derived.len());
    train_with_derived(kb, &derived, background, train, expansion)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::background::Taxonomy;
    use crate::embed::train;
    use crate::kb::QuantLabel;

    #[test]
    fn empty_expansion_equals_plain_training() {
        let mut kb = KnowledgeBase::new();
        kb.insert("a", "r", "b", QuantLabel::All).unwrap();
        kb.insert("b", "r", "c", QuantLabel::Some).unwrap();
        kb.insert("c", "r", "a", QuantLabel::None).unwrap();
        let bg = Background::default();
        let cfg = TrainConfig { dim: 8, epochs: 10, seed: 3, ..Default::default() };
        let out = expand_then_train(&kb, &bg, &cfg, &ExpansionConfig::default()).unwrap();
        assert!(out.revisited.is_empty());
        let (plain, rep) = train(&kb, &bg.typemap, &cfg).unwrap();
        assert_eq!(out.model.to_bytes(), plain.to_bytes());
        assert_eq!(out.report, rep);
    }

    #[test]
    fn derived_triples_are_rescored() {
        let mut kb = KnowledgeBase::new();
        kb.insert("animal", "livein", "forest", QuantLabel::All).unwrap();
        kb.insert("fish", "livein", "water", QuantLabel::All).unwrap();
        let bg = Background {
            taxonomy: Taxonomy::from_edges([("dog", "animal"), ("cat", "animal")]).unwrap(),
            ..Default::default()
        };
        let cfg = TrainConfig { dim: 8, epochs: 30, seed: 1, ..Default::default() };
        let exp = ExpansionConfig { keep_threshold: 0.0, ..Default::default() };
        let out = expand_then_train(&kb, &bg, &cfg, &exp).unwrap();
        assert_eq!(out.revisited.len(), 2);
        assert!(out.revisited.iter().all(|r| r.kept));
        assert_eq!(out.combined.len(), 4);
        for r in &out.revisited {
            assert_eq!(out.model.resolve(&r.derived.triple), Some(r.scored.triple));
        }
    }
}
