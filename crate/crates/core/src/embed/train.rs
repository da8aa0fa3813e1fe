//! Stochastic gradient training with per-coordinate adaptive learning rates.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::correlation::{convolve_into, correlate_into};
use super::loss::{binary_loss, binary_loss_grad, multiclass_loss, multiclass_loss_grad};
use super::model::EmbeddingModel;
use super::sampling::NegativeSampler;
use super::EmbedError;
use crate::background::TypeMap;
use crate::kb::{KnowledgeBase, QuantLabel, Triple};

const ADAGRAD_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LossMode {
    /// Logistic loss with All/Some as +1 and None as −1.
    #[default]
    Binary,
    /// Three-way softmax over All/Some/None, one relation vector per class.
    Multiclass,
}

impl LossMode {
    pub fn heads(self) -> usize {
        match self {
            LossMode::Binary => 1,
            LossMode::Multiclass => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub dim: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Per-coordinate adaptive rates (AdaGrad); plain SGD when false.
    pub adaptive: bool,
    pub n_neg: usize,
    /// Fraction of negatives drawn from entities sharing a type with the replaced one.
    pub eta: f64,
    pub l2: f64,
    pub seed: u64,
    pub loss: LossMode,
    /// Also corrupt the target slot (with probability 0.5 per negative).
    pub corrupt_target: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            dim: 64,
            epochs: 100,
            learning_rate: 0.1,
            adaptive: true,
            n_neg: 4,
            eta: 0.0,
            l2: 1e-4,
            seed: 0,
            loss: LossMode::Binary,
            corrupt_target: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), EmbedError> {
        let bad = |m: &str| Err(EmbedError::InvalidConfig(m.to_string()));
        if self.dim == 0 {
            return bad("dim must be at least 1");
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return bad("learning rate must be a non-negative finite number");
        }
        if self.n_neg == 0 {
            return bad("n_neg must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return bad("eta must lie in [0, 1]");
        }
        if !(self.l2.is_finite() && self.l2 >= 0.0) {
            return bad("l2 must be a non-negative finite number");
        }
        Ok(())
    }
}

/// One training example; `weight` scales its loss and the loss of its sampled negatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Example {
    pub triple: Triple,
    pub label: QuantLabel,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: usize,
    /// Weighted mean loss over the final epoch, negatives included.
    pub final_loss: f64,
    pub loss_history: Vec<f64>,
    /// Negatives skipped because rejection sampling ran out of attempts.
    pub exhausted_negatives: usize,
}

/// Loss of one labelled triple and its gradient with respect to each parameter block.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub loss: f64,
    pub source: Vec<f64>,
    pub target: Vec<f64>,
    /// `heads × dim`, head-major.
    pub relation: Vec<f64>,
}

/// Analytic loss gradients through the HolE score. Binary models use the logistic
/// loss; three-head models the softmax loss.
pub fn loss_and_gradients(
    model: &EmbeddingModel,
    triple: &Triple,
    label: QuantLabel,
) -> Result<Gradients, EmbedError> {
    let heads = model.head_scores(triple)?;
    let d = model.dim();
    let (loss, dscores): (f64, Vec<f64>) = if model.heads() == 1 {
        let y = label.sign();
        (binary_loss(heads[0], y), vec![binary_loss_grad(heads[0], y)])
    } else {
        let s = [heads[0], heads[1], heads[2]];
        (
            multiclass_loss(&s, label.class()),
            multiclass_loss_grad(&s, label.class()).to_vec(),
        )
    };
    let hs = model.entity(triple.source);
    let ht = model.entity(triple.target);
    let mut corr = vec![0.0; d];
    correlate_into(hs, ht, &mut corr);
    let mut g = Gradients {
        loss,
        source: vec![0.0; d],
        target: vec![0.0; d],
        relation: vec![0.0; model.heads() * d],
    };
    let mut buf = vec![0.0; d];
    for (h, &ds) in dscores.iter().enumerate() {
        let hr = model.relation(triple.relation, h);
        for (o, c) in g.relation[h * d..(h + 1) * d].iter_mut().zip(&corr) {
            *o = ds * c;
        }
        // ∂f/∂h_s = h_r ∘ h_t
        correlate_into(hr, ht, &mut buf);
        for (o, b) in g.source.iter_mut().zip(&buf) {
            *o += ds * b;
        }
        // ∂f/∂h_t = h_r * h_s
        convolve_into(hr, hs, &mut buf);
        for (o, b) in g.target.iter_mut().zip(&buf) {
            *o += ds * b;
        }
    }
    Ok(g)
}

struct Optimizer {
    lr: f64,
    adaptive: bool,
    l2: f64,
    entity_acc: Vec<f64>,
    relation_acc: Vec<f64>,
}

impl Optimizer {
    fn apply(params: &mut [f64], acc: &mut [f64], grad: &[f64], scale: f64, lr: f64, adaptive: bool, l2: f64) {
        for ((p, a), g) in params.iter_mut().zip(acc.iter_mut()).zip(grad) {
            let g = scale * g + l2 * *p;
            if adaptive {
                *a += g * g;
                *p -= lr * g / (a.sqrt() + ADAGRAD_EPS);
            } else {
                *p -= lr * g;
            }
        }
    }

    /// One weighted step on a single labelled triple; returns the (unweighted) loss.
    fn step(
        &mut self,
        model: &mut EmbeddingModel,
        triple: &Triple,
        label: QuantLabel,
        weight: f64,
    ) -> Result<f64, EmbedError> {
        let mut g = loss_and_gradients(model, triple, label)?;
        let d = model.dim();
        let w = model.heads() * d;
        let (lr, adaptive, l2) = (self.lr, self.adaptive, self.l2);
        {
            let r0 = triple.relation.index() * w;
            let params = &mut model.relation_block_mut()[r0..r0 + w];
            Self::apply(params, &mut self.relation_acc[r0..r0 + w], &g.relation, weight, lr, adaptive, l2);
        }
        let ents = model.entity_block_mut();
        if triple.source == triple.target {
            for (s, t) in g.source.iter_mut().zip(&g.target) {
                *s += t;
            }
            let e0 = triple.source.index() * d;
            Self::apply(&mut ents[e0..e0 + d], &mut self.entity_acc[e0..e0 + d], &g.source, weight, lr, adaptive, l2);
        } else {
            let s0 = triple.source.index() * d;
            Self::apply(&mut ents[s0..s0 + d], &mut self.entity_acc[s0..s0 + d], &g.source, weight, lr, adaptive, l2);
            let t0 = triple.target.index() * d;
            Self::apply(&mut ents[t0..t0 + d], &mut self.entity_acc[t0..t0 + d], &g.target, weight, lr, adaptive, l2);
        }
        Ok(g.loss)
    }
}

/// Trains on every triple of `kb` (weight 1), rejecting negatives that appear in `kb`.
pub fn train(
    kb: &KnowledgeBase,
    typemap: &TypeMap,
    config: &TrainConfig,
) -> Result<(EmbeddingModel, TrainReport), EmbedError> {
    let examples: Vec<Example> = kb
        .iter()
        .map(|(t, l)| Example {
            triple: *t,
            label: l,
            weight: 1.0,
        })
        .collect();
    train_examples(kb, &examples, kb.triples().copied().collect(), typemap, config)
}

/// Trains on explicit weighted examples over `vocab`'s id space. Negatives are
/// rejection-sampled against `known`.
pub fn train_examples(
    vocab: &KnowledgeBase,
    examples: &[Example],
    known: HashSet<Triple>,
    typemap: &TypeMap,
    config: &TrainConfig,
) -> Result<(EmbeddingModel, TrainReport), EmbedError> {
    config.validate()?;
    if examples.is_empty() {
        return Err(EmbedError::EmptyTrainingSet);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model =
        EmbeddingModel::init_with_rng(vocab, config.dim, config.loss.heads(), config.seed, &mut rng);
    let sampler = NegativeSampler::new(vocab, typemap, known);
    let mut opt = Optimizer {
        lr: config.learning_rate,
        adaptive: config.adaptive,
        l2: config.l2,
        entity_acc: vec![0.0; model.entity_block().len()],
        relation_acc: vec![0.0; model.relation_block().len()],
    };
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    let mut exhausted = 0;
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut total_w = 0.0;
        for &i in &order {
            let ex = &examples[i];
            let l = opt.step(&mut model, &ex.triple, ex.label, ex.weight)?;
            total += ex.weight * l;
            total_w += ex.weight;
            if !ex.label.is_positive() {
                continue;
            }
            let negs = sampler.sample(&ex.triple, config.n_neg, config.eta, config.corrupt_target, &mut rng);
            exhausted += negs.exhausted;
            for neg in &negs.triples {
                let l = opt.step(&mut model, neg, QuantLabel::None, ex.weight)?;
                total += ex.weight * l;
                total_w += ex.weight;
            }
        }
        let mean = if total_w > 0.0 { total / total_w } else { 0.0 };
        if !mean.is_finite() || !model.is_finite() {
            return Err(EmbedError::NonFinite {
                epoch,
                detail: format!("mean loss {mean}"),
            });
        }
        history.push(mean);
    }
    if exhausted > 0 {
        log::warn!("negative sampling exhausted {exhausted} draws during training");
    }
    let report = TrainReport {
        epochs: config.epochs,
        final_loss: history.last().copied().unwrap_or(0.0),
        loss_history: history,
        exhausted_negatives: exhausted,
    };
    log::info!("trained {} epochs, final mean loss {:.5}", report.epochs, report.final_loss);
    Ok((model, report))
}
