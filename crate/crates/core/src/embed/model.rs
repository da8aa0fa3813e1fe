//! The learned embedding model, scoring, and its binary file format.

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use indexmap::IndexSet;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::correlation::{convolve_into, correlate_into, dot};
use super::loss::{positive_log_odds, sigmoid};
use super::EmbedError;
use crate::kb::{EntityId, KnowledgeBase, NamedTriple, RelationId, Triple, Vocabulary};

const MAGIC: &[u8; 8] = b"GKBHOLE1";

/// A scored triple; `probability = σ(score)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredTriple {
    pub triple: Triple,
    pub score: f64,
    pub probability: f64,
}

impl ScoredTriple {
    pub fn new(triple: Triple, score: f64) -> Self {
        Self {
            triple,
            score,
            probability: sigmoid(score),
        }
    }
}

/// Entity and relation vectors. Binary models have one vector per relation;
/// multiclass models have three (All, Some, None heads).
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingModel {
    dim: usize,
    heads: usize,
    seed: u64,
    entities: IndexSet<String>,
    relations: IndexSet<String>,
    entity_vecs: Vec<f64>,
    relation_vecs: Vec<f64>,
}

impl EmbeddingModel {
    /// Gaussian initialization with standard deviation `1/√d`, seeded.
    pub fn init(kb: &KnowledgeBase, dim: usize, heads: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::init_with_rng(kb, dim, heads, seed, &mut rng)
    }

    pub(crate) fn init_with_rng(
        kb: &KnowledgeBase,
        dim: usize,
        heads: usize,
        seed: u64,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let normal = Normal::new(0.0, 1.0 / (dim as f64).sqrt()).expect("valid std");
        let entities: IndexSet<String> = kb.entities().iter().map(String::from).collect();
        let relations: IndexSet<String> = kb.relations().iter().map(String::from).collect();
        let entity_vecs = (0..entities.len() * dim).map(|_| normal.sample(rng)).collect();
        let relation_vecs = (0..relations.len() * heads * dim)
            .map(|_| normal.sample(rng))
            .collect();
        Self {
            dim,
            heads,
            seed,
            entities,
            relations,
            entity_vecs,
            relation_vecs,
        }
    }

    /// Builds a model from explicit vectors (`relation_vecs` holds `heads` vectors per relation).
    pub fn from_parts(
        dim: usize,
        heads: usize,
        seed: u64,
        entities: Vec<String>,
        relations: Vec<String>,
        entity_vecs: Vec<f64>,
        relation_vecs: Vec<f64>,
    ) -> Result<Self, EmbedError> {
        if dim == 0 || !(heads == 1 || heads == 3) {
            return Err(EmbedError::InvalidConfig(format!(
                "dim must be ≥ 1 and heads 1 or 3 (got dim={dim}, heads={heads})"
            )));
        }
        let entities: IndexSet<String> = entities.into_iter().collect();
        let relations: IndexSet<String> = relations.into_iter().collect();
        if entity_vecs.len() != entities.len() * dim
            || relation_vecs.len() != relations.len() * heads * dim
        {
            return Err(EmbedError::Format("vector block sizes do not match vocabulary".into()));
        }
        if entity_vecs.iter().chain(&relation_vecs).any(|x| !x.is_finite()) {
            return Err(EmbedError::Format("non-finite component".into()));
        }
        Ok(Self {
            dim,
            heads,
            seed,
            entities,
            relations,
            entity_vecs,
            relation_vecs,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn entity_id(&self, name: &str) -> Option<EntityId> {
        self.entities.get_index_of(name).map(|i| EntityId(i as u32))
    }

    pub fn relation_id(&self, name: &str) -> Option<RelationId> {
        self.relations.get_index_of(name).map(|i| RelationId(i as u32))
    }

    pub fn entity_names(&self) -> impl Iterator<Item = &str> {
        self.entities.iter().map(String::as_str)
    }

    pub fn relation_names(&self) -> impl Iterator<Item = &str> {
        self.relations.iter().map(String::as_str)
    }

    pub fn resolve(&self, t: &NamedTriple) -> Option<Triple> {
        Some(Triple::new(
            self.entity_id(&t.source)?,
            self.relation_id(&t.relation)?,
            self.entity_id(&t.target)?,
        ))
    }

    pub fn entity(&self, e: EntityId) -> &[f64] {
        let i = e.index() * self.dim;
        &self.entity_vecs[i..i + self.dim]
    }

    pub fn entity_mut(&mut self, e: EntityId) -> &mut [f64] {
        let i = e.index() * self.dim;
        &mut self.entity_vecs[i..i + self.dim]
    }

    /// Relation vector of one head.
    pub fn relation(&self, r: RelationId, head: usize) -> &[f64] {
        let i = (r.index() * self.heads + head) * self.dim;
        &self.relation_vecs[i..i + self.dim]
    }

    pub fn relation_mut(&mut self, r: RelationId, head: usize) -> &mut [f64] {
        let i = (r.index() * self.heads + head) * self.dim;
        &mut self.relation_vecs[i..i + self.dim]
    }

    /// All heads of a relation concatenated.
    pub fn relation_all_heads(&self, r: RelationId) -> &[f64] {
        let w = self.heads * self.dim;
        let i = r.index() * w;
        &self.relation_vecs[i..i + w]
    }

    pub(crate) fn entity_block_mut(&mut self) -> &mut [f64] {
        &mut self.entity_vecs
    }

    pub(crate) fn relation_block_mut(&mut self) -> &mut [f64] {
        &mut self.relation_vecs
    }

    pub(crate) fn entity_block(&self) -> &[f64] {
        &self.entity_vecs
    }

    pub(crate) fn relation_block(&self) -> &[f64] {
        &self.relation_vecs
    }

    fn check(&self, t: &Triple) -> Result<(), EmbedError> {
        for e in [t.source, t.target] {
            if e.index() >= self.entities.len() {
                return Err(EmbedError::UnknownEntity(e.0.to_string()));
            }
        }
        if t.relation.index() >= self.relations.len() {
            return Err(EmbedError::UnknownRelation(t.relation.0.to_string()));
        }
        Ok(())
    }

    /// Per-head scores `h_r · (h_s ∘ h_t)`.
    pub fn head_scores(&self, t: &Triple) -> Result<Vec<f64>, EmbedError> {
        self.check(t)?;
        let mut corr = vec![0.0; self.dim];
        correlate_into(self.entity(t.source), self.entity(t.target), &mut corr);
        Ok((0..self.heads)
            .map(|h| dot(self.relation(t.relation, h), &corr))
            .collect())
    }

    /// Ranking score: the HolE score for binary models, the log-odds of a positive
    /// label for multiclass models. Either way `σ(score)` is the positive probability.
    pub fn hole_score(&self, t: &Triple) -> Result<ScoredTriple, EmbedError> {
        let s = self.head_scores(t)?;
        Ok(ScoredTriple::new(*t, self.combine(&s)))
    }

    fn combine(&self, heads: &[f64]) -> f64 {
        if self.heads == 1 {
            heads[0]
        } else {
            positive_log_odds(&[heads[0], heads[1], heads[2]])
        }
    }

    pub fn probability(&self, t: &Triple) -> Result<f64, EmbedError> {
        Ok(self.hole_score(t)?.probability)
    }

    /// Scores `(s, r, t)` for every entity `s`, computing `h_r ∘ h_t` once.
    pub fn score_all_sources(&self, r: RelationId, t: EntityId) -> Vec<f64> {
        let n = self.entities.len();
        let mut per_head = vec![vec![0.0; n]; self.heads];
        let mut corr = vec![0.0; self.dim];
        for (h, out) in per_head.iter_mut().enumerate() {
            correlate_into(self.relation(r, h), self.entity(t), &mut corr);
            for (s, o) in out.iter_mut().enumerate() {
                *o = dot(self.entity(EntityId(s as u32)), &corr);
            }
        }
        self.merge_heads(per_head)
    }

    /// Scores `(s, r, t)` for every entity `t`, computing `h_r * h_s` once.
    pub fn score_all_targets(&self, s: EntityId, r: RelationId) -> Vec<f64> {
        let n = self.entities.len();
        let mut per_head = vec![vec![0.0; n]; self.heads];
        let mut conv = vec![0.0; self.dim];
        for (h, out) in per_head.iter_mut().enumerate() {
            convolve_into(self.relation(r, h), self.entity(s), &mut conv);
            for (t, o) in out.iter_mut().enumerate() {
                *o = dot(self.entity(EntityId(t as u32)), &conv);
            }
        }
        self.merge_heads(per_head)
    }

    fn merge_heads(&self, per_head: Vec<Vec<f64>>) -> Vec<f64> {
        if self.heads == 1 {
            return per_head.into_iter().next().unwrap_or_default();
        }
        (0..per_head[0].len())
            .map(|i| positive_log_odds(&[per_head[0][i], per_head[1][i], per_head[2][i]]))
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.entity_vecs
            .iter()
            .chain(&self.relation_vecs)
            .all(|x| x.is_finite())
    }

    /// Serializes the model to bytes (little-endian throughout).
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 + 8 * (self.entity_vecs.len() + self.relation_vecs.len()));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.heads as u32).to_le_bytes());
        out.extend_from_slice(&(self.entities.len() as u64).to_le_bytes());
        out.extend_from_slice(&(self.relations.len() as u64).to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.extend_from_slice(&vocab_hash(self.entities.iter()));
        out.extend_from_slice(&vocab_hash(self.relations.iter()));
        for name in self.entities.iter().chain(&self.relations) {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
        }
        for x in self.entity_vecs.iter().chain(&self.relation_vecs) {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, EmbedError> {
        let mut r = bytes;
        let mut magic = [0u8; 8];
        read_exact(&mut r, &mut magic)?;
        if &magic != MAGIC {
            return Err(EmbedError::Format("not a model file (bad magic)".into()));
        }
        let dim = read_u32(&mut r)? as usize;
        let heads = read_u32(&mut r)? as usize;
        let n_e = read_u64(&mut r)? as usize;
        let n_r = read_u64(&mut r)? as usize;
        let seed = read_u64(&mut r)?;
        let mut eh = [0u8; 8];
        let mut rh = [0u8; 8];
        read_exact(&mut r, &mut eh)?;
        read_exact(&mut r, &mut rh)?;
        let remaining = r.len();
        if n_e.saturating_add(n_r) > remaining / 4 {
            return Err(EmbedError::Format("vocabulary size exceeds file length".into()));
        }
        let mut names = Vec::with_capacity(n_e + n_r);
        for _ in 0..n_e + n_r {
            let len = read_u32(&mut r)? as usize;
            if len > r.len() {
                return Err(EmbedError::Format("truncated name".into()));
            }
            let (s, rest) = r.split_at(len);
            names.push(
                String::from_utf8(s.to_vec())
                    .map_err(|_| EmbedError::Format("name is not UTF-8".into()))?,
            );
            r = rest;
        }
        let relations = names.split_off(n_e);
        let entities = names;
        if vocab_hash(entities.iter()) != eh || vocab_hash(relations.iter()) != rh {
            return Err(EmbedError::Format("vocabulary hash mismatch".into()));
        }
        let n_floats = dim
            .checked_mul(n_e + heads.checked_mul(n_r).unwrap_or(usize::MAX))
            .ok_or_else(|| EmbedError::Format("header sizes overflow".into()))?;
        if r.len() != n_floats * 8 {
            return Err(EmbedError::Format(format!(
                "expected {} bytes of vectors, found {}",
                n_floats * 8,
                r.len()
            )));
        }
        let floats: Vec<f64> = r
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        let (ev, rv) = floats.split_at(n_e * dim);
        Self::from_parts(dim, heads, seed, entities, relations, ev.to_vec(), rv.to_vec())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), EmbedError> {
        let path = path.as_ref();
        let mut f = fs::File::create(path).map_err(|e| EmbedError::io(path, e))?;
        f.write_all(&self.to_bytes())
            .map_err(|e| EmbedError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, EmbedError> {
        let path = path.as_ref();
        let mut bytes = Vec::new();
        fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| EmbedError::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

impl Vocabulary for EmbeddingModel {
    fn entity_name(&self, id: EntityId) -> Option<&str> {
        self.entities.get_index(id.index()).map(String::as_str)
    }

    fn relation_name(&self, id: RelationId) -> Option<&str> {
        self.relations.get_index(id.index()).map(String::as_str)
    }
}

/// First 8 bytes of SHA-256 over newline-terminated names.
fn vocab_hash<'a>(names: impl Iterator<Item = &'a String>) -> [u8; 8] {
    let mut h = Sha256::new();
    for n in names {
        h.update(n.as_bytes());
        h.update(b"\n");
    }
    let digest = h.finalize();
    let mut out = [0u8; 8];
    out.copy_from_slice(&digest[..8]);
    out
}

fn read_exact(r: &mut &[u8], buf: &mut [u8]) -> Result<(), EmbedError> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => EmbedError::Format("truncated model file".into()),
        _ => EmbedError::Format(e.to_string()),
    })
}

fn read_u32(r: &mut &[u8]) -> Result<u32, EmbedError> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut &[u8]) -> Result<u64, EmbedError> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}
