//! Ranking unseen triples with a trained model, with schema filtering.

use serde::{Deserialize, Serialize};

use crate::background::Background;
use crate::embed::{sigmoid, EmbedError, EmbeddingModel};
use crate::guidance::schema_consistent;
use crate::kb::{EntityId, KnowledgeBase, NamedTriple, QuantLabel, RelationId, Triple};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PredictConfig {
    /// Triples below this probability are not reported.
    pub min_probability: f64,
    /// Keep at most this many predictions.
    pub limit: Option<usize>,
    /// Drop schema-inconsistent triples (they count as none).
    pub schema_filter: bool,
}

impl Default for PredictConfig {
    fn default() -> Self {
        Self {
            min_probability: 0.5,
            limit: None,
            schema_filter: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub triple: NamedTriple,
    pub probability: f64,
    pub label: QuantLabel,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PredictOutcome {
    /// Highest probability first, ties in triple order.
    pub predictions: Vec<Prediction>,
    /// Triples above the threshold removed by the schema filter.
    pub filtered: usize,
}

/// All/Some for three-head models by comparing the positive heads; Some otherwise.
pub fn predicted_label(model: &EmbeddingModel, t: &Triple) -> Result<QuantLabel, EmbedError> {
    if model.heads() == 1 {
        return Ok(QuantLabel::Some);
    }
    let h = model.head_scores(t)?;
    Ok(if h[0] > h[1] { QuantLabel::All } else { QuantLabel::Some })
}

/// Scores every `(s, r, t)` over the model vocabulary with `s ≠ t` that `known` does
/// not contain.
pub fn predict(
    model: &EmbeddingModel,
    known: &KnowledgeBase,
    background: &Background,
    config: &PredictConfig,
) -> Result<PredictOutcome, EmbedError> {
    let entities: Vec<&str> = model.entity_names().collect();
    let relations: Vec<&str> = model.relation_names().collect();
    let mut out = PredictOutcome::default();
    for (si, s) in entities.iter().enumerate() {
        for (ri, r) in relations.iter().enumerate() {
            let scores = model.score_all_targets(EntityId(si as u32), RelationId(ri as u32));
            for (ti, t) in entities.iter().enumerate() {
                if ti == si || known.label_named(s, r, t).is_some() {
                    continue;
                }
                let probability = sigmoid(scores[ti]);
                if probability < config.min_probability {
                    continue;
                }
                if config.schema_filter
                    && !schema_consistent(s, r, t, &background.schema, &background.typemap).consistent
                {
                    out.filtered += 1;
                    continue;
                }
                let id = Triple::new(EntityId(si as u32), RelationId(ri as u32), EntityId(ti as u32));
                out.predictions.push(Prediction {
                    triple: NamedTriple::new(*s, *r, *t),
                    probability,
                    label: predicted_label(model, &id)?,
                });
            }
        }
    }
    out.predictions
        .sort_by(|a, b| b.probability.total_cmp(&a.probability).then_with(|| a.triple.cmp(&b.triple)));
    if let Some(n) = config.limit {
        out.predictions.truncate(n);
    }
    Ok(out)
}
