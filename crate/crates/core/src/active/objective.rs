//! The selection objective F = w_C·C + w_D·D − w_R·R: coverage, diversity and
//! embedding redundancy of a query subset.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::{ActiveError, CandidateFact};
use crate::embed::EmbeddingModel;
use crate::kb::{KnowledgeBase, Vocabulary};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionWeights {
    pub w_c: f64,
    pub w_d: f64,
    pub w_r: f64,
}

impl Default for SelectionWeights {
    fn default() -> Self {
        Self {
            w_c: 1.0,
            w_d: 1.0,
            w_r: 0.1,
        }
    }
}

impl SelectionWeights {
    pub fn validate(&self) -> Result<(), ActiveError> {
        if [self.w_c, self.w_d, self.w_r].iter().all(|w| w.is_finite() && *w >= 0.0) {
            Ok(())
        } else {
            Err(ActiveError::InvalidWeights(format!(
                "weights must be non-negative, got w_C={}, w_D={}, w_R={}",
                self.w_c, self.w_d, self.w_r
            )))
        }
    }
}

/// Per-relation and per-entity diversity, fixed by the knowledge base.
///
/// `V_r = (|E_S(r)| + |E_T(r)|)/|E|` with the distinct sources and targets of `r`;
/// `V_e = (|R(e)| + |E_S(e)|)/(|R| + |E|)` with the relations having `e` as target and
/// the distinct sources pointing at `e`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiversityIndex {
    num_entities: usize,
    num_relations: usize,
    relation_counts: HashMap<String, (usize, usize)>,
    entity_counts: HashMap<String, (usize, usize)>,
}

impl DiversityIndex {
    pub fn new(kb: &KnowledgeBase) -> Self {
        let mut rel_sources: HashMap<String, BTreeSet<String>> = HashMap::new();
        let mut rel_targets: HashMap<String, BTreeSet<String>> = HashMap::new();
        let mut ent_relations: HashMap<String, BTreeSet<String>> = HashMap::new();
        let mut ent_sources: HashMap<String, BTreeSet<String>> = HashMap::new();
        for (t, _) in kb.iter() {
            let Some(n) = kb.named(t) else { continue };
            rel_sources.entry(n.relation.clone()).or_default().insert(n.source.clone());
            rel_targets.entry(n.relation.clone()).or_default().insert(n.target.clone());
            ent_relations.entry(n.target.clone()).or_default().insert(n.relation.clone());
            ent_sources.entry(n.target.clone()).or_default().insert(n.source.clone());
        }
        let relation_counts = kb
            .relations()
            .iter()
            .map(|r| {
                let s = rel_sources.get(r).map_or(0, BTreeSet::len);
                let t = rel_targets.get(r).map_or(0, BTreeSet::len);
                (r.to_string(), (s, t))
            })
            .collect();
        let entity_counts = kb
            .entities()
            .iter()
            .map(|e| {
                let r = ent_relations.get(e).map_or(0, BTreeSet::len);
                let s = ent_sources.get(e).map_or(0, BTreeSet::len);
                (e.to_string(), (r, s))
            })
            .collect();
        Self {
            num_entities: kb.num_entities(),
            num_relations: kb.num_relations(),
            relation_counts,
            entity_counts,
        }
    }

    pub fn num_entities(&self) -> usize {
        self.num_entities
    }

    pub fn num_relations(&self) -> usize {
        self.num_relations
    }

    /// `(|E_S(r)|, |E_T(r)|)`.
    pub fn relation_counts(&self, r: &str) -> (usize, usize) {
        self.relation_counts.get(r).copied().unwrap_or((0, 0))
    }

    /// `(|R(e)|, |E_S(e)|)`.
    pub fn entity_counts(&self, e: &str) -> (usize, usize) {
        self.entity_counts.get(e).copied().unwrap_or((0, 0))
    }

    pub fn v_relation(&self, r: &str) -> f64 {
        let (s, t) = self.relation_counts(r);
        if self.num_entities == 0 {
            return 0.0;
        }
        (s + t) as f64 / self.num_entities as f64
    }

    pub fn v_entity(&self, e: &str) -> f64 {
        let (r, s) = self.entity_counts(e);
        let denom = self.num_relations + self.num_entities;
        if denom == 0 {
            return 0.0;
        }
        (r + s) as f64 / denom as f64
    }
}

/// A candidate list compiled against a diversity index and embedding snapshot, so that
/// subsets can be addressed by index.
#[derive(Debug, Clone)]
pub struct SelectionProblem {
    weights: SelectionWeights,
    num_relations: usize,
    num_entities: usize,
    rel: Vec<usize>,
    ent: Vec<usize>,
    div: Vec<f64>,
    rel_vecs: Vec<Vec<f64>>,
    ent_vecs: Vec<Vec<f64>>,
    lex_order: Vec<usize>,
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

impl SelectionProblem {
    /// Compiles `candidates`. Every relation and other-entity must have an embedding.
    pub fn new(
        candidates: &[CandidateFact],
        diversity: &DiversityIndex,
        model: &EmbeddingModel,
        weights: SelectionWeights,
    ) -> Result<Self, ActiveError> {
        weights.validate()?;
        let mut rel_ix: HashMap<&str, usize> = HashMap::new();
        let mut ent_ix: HashMap<&str, usize> = HashMap::new();
        let mut rel_vecs = Vec::new();
        let mut ent_vecs = Vec::new();
        let mut rel = Vec::with_capacity(candidates.len());
        let mut ent = Vec::with_capacity(candidates.len());
        let mut div = Vec::with_capacity(candidates.len());
        for c in candidates {
            let r = match rel_ix.get(c.relation.as_str()) {
                Some(&i) => i,
                None => {
                    let id = model
                        .relation_id(&c.relation)
                        .ok_or_else(|| ActiveError::MissingEmbedding(c.relation.clone()))?;
                    rel_vecs.push(model.relation_all_heads(id).to_vec());
                    rel_ix.insert(&c.relation, rel_vecs.len() - 1);
                    rel_vecs.len() - 1
                }
            };
            let e = match ent_ix.get(c.other.as_str()) {
                Some(&i) => i,
                None => {
                    let id = model
                        .entity_id(&c.other)
                        .ok_or_else(|| ActiveError::MissingEmbedding(c.other.clone()))?;
                    ent_vecs.push(model.entity(id).to_vec());
                    ent_ix.insert(&c.other, ent_vecs.len() - 1);
                    ent_vecs.len() - 1
                }
            };
            rel.push(r);
            ent.push(e);
            div.push(diversity.v_relation(&c.relation) + diversity.v_entity(&c.other));
        }
        let mut lex_order: Vec<usize> = (0..candidates.len()).collect();
        lex_order.sort_by(|&a, &b| candidates[a].key().cmp(&candidates[b].key()));
        Ok(Self {
            weights,
            num_relations: diversity.num_relations(),
            num_entities: diversity.num_entities(),
            rel,
            ent,
            div,
            rel_vecs,
            ent_vecs,
            lex_order,
        })
    }

    pub fn len(&self) -> usize {
        self.rel.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rel.is_empty()
    }

    pub fn weights(&self) -> SelectionWeights {
        self.weights
    }

    /// Distinct relations and distinct other-entities covered by `subset`.
    pub fn coverage_counts(&self, subset: &[usize]) -> (usize, usize) {
        let r: BTreeSet<usize> = subset.iter().map(|&i| self.rel[i]).collect();
        let e: BTreeSet<usize> = subset.iter().map(|&i| self.ent[i]).collect();
        (r.len(), e.len())
    }

    /// `C = |R_L|/|R| + |E_L|/|E|`.
    pub fn coverage(&self, subset: &[usize]) -> f64 {
        let (r, e) = self.coverage_counts(subset);
        ratio(r, self.num_relations) + ratio(e, self.num_entities)
    }

    /// `D = Σ (V_r + V_e)`.
    pub fn diversity(&self, subset: &[usize]) -> f64 {
        subset.iter().map(|&i| self.div[i]).sum()
    }

    /// `V_r + V_e` of one candidate.
    pub fn diversity_of(&self, i: usize) -> f64 {
        self.div[i]
    }

    /// Embedding distance between two candidates: relation part plus entity part.
    pub fn pair_distance(&self, i: usize, j: usize) -> f64 {
        distance(&self.rel_vecs[self.rel[i]], &self.rel_vecs[self.rel[j]])
            + distance(&self.ent_vecs[self.ent[i]], &self.ent_vecs[self.ent[j]])
    }

    /// `R`: pairwise distances summed over unordered pairs of subset elements.
    pub fn redundancy(&self, subset: &[usize]) -> f64 {
        let mut total = 0.0;
        for (a, &i) in subset.iter().enumerate() {
            for &j in &subset[a + 1..] {
                total += self.pair_distance(i, j);
            }
        }
        total
    }

    pub fn objective(&self, subset: &[usize]) -> f64 {
        let w = self.weights;
        w.w_c * self.coverage(subset) + w.w_d * self.diversity(subset) - w.w_r * self.redundancy(subset)
    }

    /// Candidate indices in lexicographic `(relation, other, orientation)` order.
    pub fn lex_order(&self) -> &[usize] {
        &self.lex_order
    }

    pub(crate) fn rel_of(&self, i: usize) -> usize {
        self.rel[i]
    }

    pub(crate) fn ent_of(&self, i: usize) -> usize {
        self.ent[i]
    }

    pub(crate) fn distinct_relations(&self) -> usize {
        self.rel_vecs.len()
    }

    pub(crate) fn distinct_entities(&self) -> usize {
        self.ent_vecs.len()
    }

    /// Coverage gain of adding a new relation and/or a new entity.
    pub(crate) fn coverage_gain(&self, new_rel: bool, new_ent: bool) -> f64 {
        ratio(new_rel as usize, self.num_relations) + ratio(new_ent as usize, self.num_entities)
    }
}

pub(crate) fn ratio(n: usize, d: usize) -> f64 {
    if d == 0 {
        0.0
    } else {
        n as f64 / d as f64
    }
}

/// `F(subset)` for candidates compiled against `kb`'s diversity and `model`'s embeddings.
pub fn objective_f(
    subset: &[CandidateFact],
    kb: &KnowledgeBase,
    model: &EmbeddingModel,
    weights: SelectionWeights,
) -> Result<f64, ActiveError> {
    let diversity = DiversityIndex::new(kb);
    let problem = SelectionProblem::new(subset, &diversity, model, weights)?;
    let all: Vec<usize> = (0..problem.len()).collect();
    Ok(problem.objective(&all))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::active::Orientation;
    use crate::kb::QuantLabel;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_kb() -> KnowledgeBase {
        let mut kb = KnowledgeBase::new();
        kb.insert("a", "r", "b", QuantLabel::All).unwrap();
        kb.insert("c", "r", "b", QuantLabel::Some).unwrap();
        kb.insert("a", "q", "c", QuantLabel::None).unwrap();
        kb.insert("b", "q", "d", QuantLabel::Some).unwrap();
        kb
    }

    #[test]
    fn diversity_values() {
        let kb = small_kb();
        let d = DiversityIndex::new(&kb);
        // r: sources {a,c}, targets {b}; |E| = 4.
        assert_eq!(d.v_relation("r"), 3.0 / 4.0);
        // q: sources {a,b}, targets {c,d}.
        assert_eq!(d.v_relation("q"), 4.0 / 4.0);
        // b as target: relations {r}, sources {a,c}; |R|+|E| = 6.
        assert_eq!(d.v_entity("b"), 3.0 / 6.0);
        assert_eq!(d.v_entity("a"), 0.0);
        assert_eq!(d.v_entity("zzz"), 0.0);
    }

    #[test]
    fn empty_and_singleton() {
        let kb = small_kb();
        let model = EmbeddingModel::init(&kb, 6, 1, 2);
        let w = SelectionWeights { w_c: 2.0, w_d: 3.0, w_r: 5.0 };
        assert_eq!(objective_f(&[], &kb, &model, w).unwrap(), 0.0);
        let c = CandidateFact::new("q", "b", Orientation::Source, 0.5);
        let d = DiversityIndex::new(&kb);
        let expect = 2.0 * (1.0 / 2.0 + 1.0 / 4.0) + 3.0 * (d.v_relation("q") + d.v_entity("b"));
        assert!((objective_f(&[c], &kb, &model, w).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn missing_embeddings() {
        let kb = small_kb();
        let model = EmbeddingModel::init(&kb, 6, 1, 2);
        let c = CandidateFact::new("fly", "b", Orientation::Source, 0.5);
        assert!(matches!(
            objective_f(&[c], &kb, &model, SelectionWeights::default()),
            Err(ActiveError::MissingEmbedding(_))
        ));
        let bad = SelectionWeights { w_r: -1.0, ..Default::default() };
        assert!(matches!(objective_f(&[], &kb, &model, bad), Err(ActiveError::InvalidWeights(_))));
    }

    /// Second evaluator coded straight from the formula over named candidates.
    fn reference_f(subset: &[CandidateFact], kb: &KnowledgeBase, model: &EmbeddingModel, w: SelectionWeights) -> f64 {
        let rels: BTreeSet<&str> = subset.iter().map(|c| c.relation.as_str()).collect();
        let ents: BTreeSet<&str> = subset.iter().map(|c| c.other.as_str()).collect();
        let cov = rels.len() as f64 / kb.num_relations() as f64 + ents.len() as f64 / kb.num_entities() as f64;
        let facts: Vec<(String, String, String)> = kb
            .iter()
            .map(|(t, _)| {
                let n = kb.named(t).unwrap();
                (n.source, n.relation, n.target)
            })
            .collect();
        let mut div = 0.0;
        for c in subset {
            let es: BTreeSet<&str> = facts.iter().filter(|f| f.1 == c.relation).map(|f| f.0.as_str()).collect();
            let et: BTreeSet<&str> = facts.iter().filter(|f| f.1 == c.relation).map(|f| f.2.as_str()).collect();
            let re: BTreeSet<&str> = facts.iter().filter(|f| f.2 == c.other).map(|f| f.1.as_str()).collect();
            let se: BTreeSet<&str> = facts.iter().filter(|f| f.2 == c.other).map(|f| f.0.as_str()).collect();
            div += (es.len() + et.len()) as f64 / kb.num_entities() as f64
                + (re.len() + se.len()) as f64 / (kb.num_relations() + kb.num_entities()) as f64;
        }
        let norm = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let mut red = 0.0;
        for i in 0..subset.len() {
            for j in i + 1..subset.len() {
                let ri = model.relation_all_heads(model.relation_id(&subset[i].relation).unwrap());
                let rj = model.relation_all_heads(model.relation_id(&subset[j].relation).unwrap());
                let ei = model.entity(model.entity_id(&subset[i].other).unwrap());
                let ej = model.entity(model.entity_id(&subset[j].other).unwrap());
                red += norm(ri, rj) + norm(ei, ej);
            }
        }
        w.w_c * cov + w.w_d * div - w.w_r * red
    }

    pub(crate) fn random_world(seed: u64) -> (KnowledgeBase, Vec<CandidateFact>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut kb = KnowledgeBase::new();
        for _ in 0..40 {
            let _ = kb.insert(
                &format!("e{}", rng.random_range(0..12)),
                &format!("r{}", rng.random_range(0..4)),
                &format!("e{}", rng.random_range(0..12)),
                QuantLabel::ALL[rng.random_range(0..3)],
            );
        }
        let ents: Vec<String> = kb.entities().iter().map(String::from).collect();
        let rels: Vec<String> = kb.relations().iter().map(String::from).collect();
        let mut seen = BTreeSet::new();
        let mut cands = Vec::new();
        while cands.len() < 10 {
            let r = rels[rng.random_range(0..rels.len())].clone();
            let e = ents[rng.random_range(0..ents.len())].clone();
            let o = if rng.random_bool(0.5) { Orientation::Source } else { Orientation::Target };
            if seen.insert((r.clone(), e.clone(), o)) {
                cands.push(CandidateFact::new(r, e, o, rng.random_range(0.0..1.0)));
            }
        }
        (kb, cands)
    }

    #[test]
    fn matches_reference_on_random_subsets() {
        for seed in 0..100 {
            let (kb, cands) = random_world(seed);
            let model = EmbeddingModel::init(&kb, 5, 3, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 1000);
            let w = SelectionWeights {
                w_c: rng.random_range(0.0..3.0),
                w_d: rng.random_range(0.0..3.0),
                w_r: rng.random_range(0.0..1.0),
            };
            let mut idx: Vec<usize> = (0..cands.len()).collect();
            use rand::seq::SliceRandom;
            idx.shuffle(&mut rng);
            let subset: Vec<CandidateFact> = idx[..6].iter().map(|&i| cands[i].clone()).collect();
            let got = objective_f(&subset, &kb, &model, w).unwrap();
            let expect = reference_f(&subset, &kb, &model, w);
            assert!((got - expect).abs() <= 1e-10, "seed {seed}: {got} vs {expect}");
        }
    }

    #[test]
    fn diversity_index_is_selection_independent() {
        let (kb, cands) = random_world(3);
        let before = DiversityIndex::new(&kb);
        let model = EmbeddingModel::init(&kb, 4, 1, 0);
        let p = SelectionProblem::new(&cands, &before, &model, SelectionWeights::default()).unwrap();
        let _ = crate::active::greedy_select(&p, 4, false).unwrap();
        assert_eq!(DiversityIndex::new(&kb), before);
    }
}
