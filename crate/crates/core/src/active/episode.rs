//! One active-learning episode: propose, select, annotate, refit, and count what was
//! learned about the new entity.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::objective::{DiversityIndex, SelectionProblem, SelectionWeights};
use super::propose::{propose_queries, ProposalConfig};
use super::select::{greedy_select, top_k};
use super::{ActiveError, CandidateFact, ProposalMode, SelectionMethod, Thresholds};
use crate::background::Background;
use crate::embed::{sigmoid, EmbeddingModel, TrainConfig};
use crate::guidance::{expand_then_train, schema_consistent, ExpansionConfig};
use crate::kb::{KnowledgeBase, NamedTriple, QuantLabel, RelationId};
use crate::predict::predicted_label;

/// Answers quantified questions about triples.
pub trait Annotator {
    fn annotate(&mut self, triple: &NamedTriple) -> Result<QuantLabel, ActiveError>;
}

/// Annotator backed by a ground-truth label set; unlisted triples are None.
#[derive(Debug, Clone, Default)]
pub struct TruthOracle {
    truth: BTreeMap<NamedTriple, QuantLabel>,
    asked: BTreeSet<NamedTriple>,
}

impl TruthOracle {
    pub fn new(truth: BTreeMap<NamedTriple, QuantLabel>) -> Self {
        Self {
            truth,
            asked: BTreeSet::new(),
        }
    }

    pub fn from_kb(kb: &KnowledgeBase) -> Self {
        Self::new(kb.named_facts())
    }

    /// Distinct triples asked so far.
    pub fn queries(&self) -> usize {
        self.asked.len()
    }

    pub fn label(&self, t: &NamedTriple) -> QuantLabel {
        self.truth.get(t).copied().unwrap_or(QuantLabel::None)
    }
}

impl Annotator for TruthOracle {
    fn annotate(&mut self, triple: &NamedTriple) -> Result<QuantLabel, ActiveError> {
        self.asked.insert(triple.clone());
        Ok(self.label(triple))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EpisodeConfig {
    pub mode: ProposalMode,
    pub selection: SelectionMethod,
    pub budget: usize,
    pub thresholds: Thresholds,
    pub weights: SelectionWeights,
    /// Stop greedy selection once no marginal gain is positive.
    pub early_stop: bool,
    pub random_pool: usize,
    /// Predictions at or above this probability are reported.
    pub report_threshold: f64,
    /// At most this many predictions are reported, best first.
    pub report_top: Option<usize>,
    pub seed: u64,
    pub train: TrainConfig,
    pub expansion: ExpansionConfig,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            mode: ProposalMode::SiblingGuided,
            selection: SelectionMethod::Submodular,
            budget: 10,
            thresholds: Thresholds::default(),
            weights: SelectionWeights::default(),
            early_stop: false,
            random_pool: ProposalConfig::default().random_pool,
            report_threshold: 0.0,
            report_top: Some(10),
            seed: 0,
            train: TrainConfig::default(),
            expansion: ExpansionConfig::default(),
        }
    }
}

impl EpisodeConfig {
    fn proposal(&self) -> ProposalConfig {
        ProposalConfig {
            thresholds: self.thresholds,
            random_pool: self.random_pool,
            seed: self.seed,
        }
    }
}

/// State of one episode, serializable between the proposal and refit phases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuerySession {
    pub entity: String,
    pub siblings: Vec<String>,
    pub mode: ProposalMode,
    pub selection: SelectionMethod,
    pub thresholds: Thresholds,
    pub weights: SelectionWeights,
    pub budget: usize,
    /// L, most uncertain first.
    pub candidates: Vec<CandidateFact>,
    /// M, accepted on sibling agreement.
    pub auto_accept: Vec<CandidateFact>,
    /// Indices into `candidates`, in selection order.
    pub selected: Vec<usize>,
    /// Answers keyed by position in `selected`.
    pub annotations: BTreeMap<usize, QuantLabel>,
    pub model_snapshot: Option<String>,
}

impl QuerySession {
    pub fn fact_id(i: usize) -> String {
        format!("q{i}")
    }

    fn parse_fact_id(&self, id: &str) -> Result<usize, ActiveError> {
        id.strip_prefix('q')
            .and_then(|n| n.parse::<usize>().ok())
            .filter(|&i| i < self.selected.len())
            .ok_or_else(|| ActiveError::UnknownFact(id.to_string()))
    }

    /// Selected candidates with their fact ids.
    pub fn selected_facts(&self) -> impl Iterator<Item = (String, &CandidateFact)> {
        self.selected
            .iter()
            .enumerate()
            .map(|(i, &c)| (Self::fact_id(i), &self.candidates[c]))
    }

    /// Records (or overwrites) the answer for `fact_id`.
    pub fn annotate(&mut self, fact_id: &str, label: QuantLabel) -> Result<(), ActiveError> {
        let i = self.parse_fact_id(fact_id)?;
        self.annotations.insert(i, label);
        Ok(())
    }

    pub fn annotation(&self, fact_id: &str) -> Option<QuantLabel> {
        self.parse_fact_id(fact_id).ok().and_then(|i| self.annotations.get(&i).copied())
    }

    /// Fact ids still awaiting an answer.
    pub fn pending(&self) -> Vec<String> {
        (0..self.selected.len())
            .filter(|i| !self.annotations.contains_key(i))
            .map(Self::fact_id)
            .collect()
    }

    pub fn is_complete(&self) -> bool {
        self.annotations.len() == self.selected.len()
    }

    /// Checks the structural invariants of a session.
    pub fn validate(&self) -> Result<(), String> {
        self.thresholds.validate().map_err(|e| e.to_string())?;
        let th = self.thresholds;
        if self.selected.len() > self.budget {
            return Err(format!("{} selected with budget {}", self.selected.len(), self.budget));
        }
        let sel: BTreeSet<usize> = self.selected.iter().copied().collect();
        if sel.len() != self.selected.len() || sel.iter().any(|&i| i >= self.candidates.len()) {
            return Err("selection is not a subset of the candidate list".into());
        }
        if let Some(c) = self.candidates.iter().find(|c| c.p < th.tau_l || c.p > th.tau_u) {
            if self.mode == ProposalMode::SiblingGuided {
                return Err(format!("candidate {c} outside [τ_L, τ_U]"));
            }
        }
        if let Some(c) = self.auto_accept.iter().find(|c| c.p < th.kappa_m) {
            return Err(format!("auto-accepted {c} below κ_M"));
        }
        let keys: BTreeSet<_> = self.candidates.iter().map(|c| c.key()).collect();
        if keys.len() != self.candidates.len() {
            return Err("duplicate candidates".into());
        }
        if self.auto_accept.iter().any(|c| keys.contains(&c.key())) {
            return Err("candidate list and auto-accept list overlap".into());
        }
        if self.annotations.keys().any(|&i| i >= self.selected.len()) {
            return Err("annotation for an unselected fact".into());
        }
        Ok(())
    }
}

/// Short content hash of a model, used to tie a session to its embedding snapshot.
pub fn snapshot_id(model: &EmbeddingModel) -> String {
    let digest = Sha256::digest(model.to_bytes());
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// Proposes candidates for `entity` and selects the subset to ask about. Submodular
/// selection needs `model` for the redundancy term; top-k does not.
pub fn begin_session(
    entity: &str,
    kb: &KnowledgeBase,
    background: &Background,
    model: Option<&EmbeddingModel>,
    config: &EpisodeConfig,
) -> Result<QuerySession, ActiveError> {
    config.weights.validate()?;
    let proposal = propose_queries(entity, kb, background, config.mode, &config.proposal())?;
    let selected = if config.budget == 0 || proposal.candidates.is_empty() {
        Vec::new()
    } else {
        match config.selection {
            SelectionMethod::TopK => top_k(proposal.candidates.len(), config.budget),
            SelectionMethod::Submodular => {
                let model = model.ok_or(ActiveError::MissingModel)?;
                let problem =
                    SelectionProblem::new(&proposal.candidates, &DiversityIndex::new(kb), model, config.weights)?;
                greedy_select(&problem, config.budget, config.early_stop)?
            }
        }
    };
    log::info!(
        "{entity}: {} candidates, {} auto-accepted, {} selected",
        proposal.candidates.len(),
        proposal.auto_accept.len(),
        selected.len()
    );
    Ok(QuerySession {
        entity: entity.to_string(),
        siblings: proposal.siblings,
        mode: config.mode,
        selection: config.selection,
        thresholds: config.thresholds,
        weights: config.weights,
        budget: config.budget,
        candidates: proposal.candidates,
        auto_accept: proposal.auto_accept,
        selected,
        annotations: BTreeMap::new(),
        model_snapshot: model.map(snapshot_id),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Annotation,
    SiblingAgreement,
    Factorization,
}

/// A new fact about the episode's entity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferredFact {
    pub triple: NamedTriple,
    pub label: QuantLabel,
    pub provenance: Provenance,
    /// Probability under the refit model.
    pub probability: f64,
}

#[derive(Debug, Clone)]
pub struct SessionOutcome {
    pub model: EmbeddingModel,
    /// The knowledge base with annotated-true and auto-accepted facts added.
    pub augmented: KnowledgeBase,
    /// New facts, highest probability first.
    pub facts: Vec<InferredFact>,
}

impl SessionOutcome {
    pub fn count(&self, p: Provenance) -> usize {
        self.facts.iter().filter(|f| f.provenance == p).count()
    }
}

/// Adds the annotated-true facts and M to `kb`, refits with taxonomy expansion, and
/// scores every schema-consistent unknown triple involving the entity; the best
/// `report_top` of those at or above `report_threshold` are reported. Facts from
/// sibling agreement carry label Some.
pub fn complete_session(
    session: &QuerySession,
    kb: &KnowledgeBase,
    background: &Background,
    config: &EpisodeConfig,
) -> Result<SessionOutcome, ActiveError> {
    if let Some(id) = session.pending().into_iter().next() {
        return Err(ActiveError::MissingAnnotation(id));
    }
    let e = session.entity.as_str();
    let mut augmented = kb.clone();
    let mut added: Vec<(NamedTriple, QuantLabel, Provenance)> = Vec::new();
    let mut asked: BTreeSet<NamedTriple> = BTreeSet::new();
    for (pos, &c) in session.selected.iter().enumerate() {
        let t = session.candidates[c].triple(e);
        let label = session.annotations[&pos];
        asked.insert(t.clone());
        if label.is_positive() {
            augmented.insert_named(&t, label)?;
            added.push((t, label, Provenance::Annotation));
        }
    }
    for c in &session.auto_accept {
        let t = c.triple(e);
        augmented.insert_named(&t, QuantLabel::Some)?;
        added.push((t, QuantLabel::Some, Provenance::SiblingAgreement));
    }
    let out = expand_then_train(&augmented, background, &config.train, &config.expansion)?;
    let model = out.model;
    let mut facts = Vec::new();
    for (t, label, provenance) in added {
        let id = model.resolve(&t).expect("added facts are in the model vocabulary");
        facts.push(InferredFact {
            probability: model.probability(&id)?,
            triple: t,
            label,
            provenance,
        });
    }
    let mut predicted = Vec::new();
    if let Some(eid) = model.entity_id(e) {
        let entities: Vec<&str> = model.entity_names().collect();
        for (ri, r) in model.relation_names().enumerate() {
            let rid = RelationId(ri as u32);
            let as_source = model.score_all_targets(eid, rid);
            let as_target = model.score_all_sources(rid, eid);
            for (oi, o) in entities.iter().enumerate() {
                if *o == e {
                    continue;
                }
                for (t, score) in [
                    (NamedTriple::new(e, r, *o), as_source[oi]),
                    (NamedTriple::new(*o, r, e), as_target[oi]),
                ] {
                    if augmented.label_named(&t.source, &t.relation, &t.target).is_some() || asked.contains(&t) {
                        continue;
                    }
                    let probability = sigmoid(score);
                    if probability < config.report_threshold {
                        continue;
                    }
                    if !schema_consistent(&t.source, &t.relation, &t.target, &background.schema, &background.typemap)
                        .consistent
                    {
                        continue;
                    }
                    let id = model.resolve(&t).expect("names come from the model");
                    predicted.push(InferredFact {
                        label: predicted_label(&model, &id)?,
                        triple: t,
                        provenance: Provenance::Factorization,
                        probability,
                    });
                }
            }
        }
    } else {
        log::info!("{e} has no facts after annotation; nothing to predict");
    }
    let by_probability = |a: &InferredFact, b: &InferredFact| b.probability.total_cmp(&a.probability).then_with(|| a.triple.cmp(&b.triple));
    predicted.sort_by(by_probability);
    if let Some(n) = config.report_top {
        predicted.truncate(n);
    }
    facts.extend(predicted);
    facts.sort_by(by_probability);
    Ok(SessionOutcome {
        model,
        augmented,
        facts,
    })
}

/// Counts in the shape of a yield table: facts confirmed true from each source.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeReport {
    pub entity: String,
    pub mode: ProposalMode,
    pub selection: SelectionMethod,
    pub budget: usize,
    pub proposed: usize,
    pub auto_accepted: usize,
    pub selected: usize,
    pub from_annotation: usize,
    pub from_sibling_agreement: usize,
    pub from_factorization: usize,
    pub total: usize,
    /// Predictions at or above the report threshold, true or not.
    pub predictions: usize,
}

/// Runs a full episode with `annotator` answering both the selected queries and the
/// verification of auto-accepted facts and predictions.
pub fn run_episode(
    entity: &str,
    kb: &KnowledgeBase,
    background: &Background,
    config: &EpisodeConfig,
    annotator: &mut dyn Annotator,
) -> Result<EpisodeReport, ActiveError> {
    let snapshot = if config.selection == SelectionMethod::Submodular && config.budget > 0 {
        Some(expand_then_train(kb, background, &config.train, &config.expansion)?.model)
    } else {
        None
    };
    let mut session = begin_session(entity, kb, background, snapshot.as_ref(), config)?;
    let questions: Vec<(String, NamedTriple)> =
        session.selected_facts().map(|(id, c)| (id, c.triple(entity))).collect();
    for (id, t) in questions {
        let label = annotator.annotate(&t)?;
        session.annotate(&id, label)?;
    }
    let outcome = complete_session(&session, kb, background, config)?;
    let mut from_sibling = 0;
    let mut from_fact = 0;
    let mut predictions = 0;
    for f in &outcome.facts {
        match f.provenance {
            Provenance::Annotation => {}
            Provenance::SiblingAgreement => from_sibling += annotator.annotate(&f.triple)?.is_positive() as usize,
            Provenance::Factorization => {
                predictions += 1;
                from_fact += annotator.annotate(&f.triple)?.is_positive() as usize;
            }
        }
    }
    let from_annotation = outcome.count(Provenance::Annotation);
    Ok(EpisodeReport {
        entity: entity.to_string(),
        mode: config.mode,
        selection: config.selection,
        budget: config.budget,
        proposed: session.candidates.len(),
        auto_accepted: session.auto_accept.len(),
        selected: session.selected.len(),
        from_annotation,
        from_sibling_agreement: from_sibling,
        from_factorization: from_fact,
        total: from_annotation + from_sibling + from_fact,
        predictions,
    })
}
