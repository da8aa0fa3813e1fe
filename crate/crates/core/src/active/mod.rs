//! Active learning for a new or rare entity ẽ: sibling-guided query proposal,
//! submodular subset selection, annotation and refit.

pub mod episode;
pub mod objective;
pub mod propose;
pub mod select;

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embed::EmbedError;
use crate::kb::{KbError, NamedTriple};

pub use episode::{
    begin_session, complete_session, run_episode, Annotator, EpisodeConfig, EpisodeReport, InferredFact,
    Provenance, QuerySession, SessionOutcome, TruthOracle,
};
pub use objective::{objective_f, DiversityIndex, SelectionProblem, SelectionWeights};
pub use propose::{estimate_conditional, propose_queries, FactIndex, Proposal, ProposalConfig};
pub use select::{greedy_select, top_k};

#[derive(Debug, Error)]
pub enum ActiveError {
    #[error("cold entity {entity:?}: {reason}; fall back to schema-consistent proposal")]
    ColdEntity { entity: String, reason: String },
    #[error("invalid thresholds: {0}")]
    InvalidThresholds(String),
    #[error("invalid selection weights: {0}")]
    InvalidWeights(String),
    #[error("candidate list is empty")]
    EmptyCandidates,
    #[error("budget must be at least 1")]
    ZeroBudget,
    #[error("no embedding for {0}")]
    MissingEmbedding(String),
    #[error("session is missing an annotation for {0}")]
    MissingAnnotation(String),
    #[error("unknown fact id {0:?}")]
    UnknownFact(String),
    #[error("submodular selection needs an embedding snapshot")]
    MissingModel,
    #[error("annotation failed: {0}")]
    Annotation(String),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Kb(#[from] KbError),
}

/// Which slot of the triple the new entity occupies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Orientation {
    Source,
    Target,
}

/// A candidate fact about ẽ: `(ẽ, relation, other)` or `(other, relation, ẽ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateFact {
    pub relation: String,
    pub other: String,
    pub orientation: Orientation,
    /// Estimated probability that the fact holds for ẽ.
    pub p: f64,
}

impl CandidateFact {
    pub fn new(relation: impl Into<String>, other: impl Into<String>, orientation: Orientation, p: f64) -> Self {
        Self {
            relation: relation.into(),
            other: other.into(),
            orientation,
            p,
        }
    }

    /// The triple this candidate denotes for `entity`.
    pub fn triple(&self, entity: &str) -> NamedTriple {
        match self.orientation {
            Orientation::Source => NamedTriple::new(entity, self.relation.as_str(), self.other.as_str()),
            Orientation::Target => NamedTriple::new(self.other.as_str(), self.relation.as_str(), entity),
        }
    }

    /// Identity within a session, independent of `p`.
    pub fn key(&self) -> (&str, &str, Orientation) {
        (&self.relation, &self.other, self.orientation)
    }

    /// Lexicographic order of the denoted triples.
    pub fn cmp_triple(&self, other: &CandidateFact, entity: &str) -> Ordering {
        self.triple(entity).cmp(&other.triple(entity))
    }
}

impl fmt::Display for CandidateFact {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let dir = match self.orientation {
            Orientation::Source => "ẽ→",
            Orientation::Target => "→ẽ",
        };
        write!(f, "{} {} {} (p={:.3})", self.relation, dir, self.other, self.p)
    }
}

/// Routing thresholds: `p ≥ κ_M` is auto-accepted, `τ_L ≤ p ≤ τ_U` is queried.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub kappa_m: f64,
    pub tau_l: f64,
    pub tau_u: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            kappa_m: 0.9,
            tau_l: 0.2,
            tau_u: 0.8,
        }
    }
}

impl Thresholds {
    pub fn validate(&self) -> Result<(), ActiveError> {
        let ok = self.kappa_m <= 1.0 && self.kappa_m > self.tau_u && self.tau_u > self.tau_l && self.tau_l >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(ActiveError::InvalidThresholds(format!(
                "need 1 ≥ κ_M > τ_U > τ_L ≥ 0, got κ_M={}, τ_U={}, τ_L={}",
                self.kappa_m, self.tau_u, self.tau_l
            )))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProposalMode {
    Random,
    SchemaConsistent,
    SiblingGuided,
}

impl std::str::FromStr for ProposalMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('_', "-").as_str() {
            "random" => Ok(ProposalMode::Random),
            "schema-consistent" | "schema" | "sc" => Ok(ProposalMode::SchemaConsistent),
            "sibling-guided" | "sibling" | "sg" => Ok(ProposalMode::SiblingGuided),
            other => Err(format!("unknown proposal mode {other:?}")),
        }
    }
}

impl fmt::Display for ProposalMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProposalMode::Random => "random",
            ProposalMode::SchemaConsistent => "schema-consistent",
            ProposalMode::SiblingGuided => "sibling-guided",
        })
    }
}

/// Subset selection: greedy submodular (SM) or the first B of L (TK).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectionMethod {
    Submodular,
    TopK,
}

impl std::str::FromStr for SelectionMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "submodular" | "sm" => Ok(SelectionMethod::Submodular),
            "topk" | "top-k" | "tk" => Ok(SelectionMethod::TopK),
            other => Err(format!("unknown selection method {other:?}")),
        }
    }
}

impl fmt::Display for SelectionMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SelectionMethod::Submodular => "submodular",
            SelectionMethod::TopK => "topk",
        })
    }
}
