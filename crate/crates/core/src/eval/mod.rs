//! Precision at yield for ranked predictions, and geometric lower/upper estimators
//! that need only about `Δ·log_α y` true-value queries.
//!
//! All precision values are exact rationals; floats appear only for `α`, logarithms
//! and reporting.

pub mod bounds;
pub mod oracle;
pub mod precision;
pub mod stream;

use thiserror::Error;

pub use bounds::{
    approximation_check, bound_estimators, bounds_report, checkpoint_yields, ratio_check, ApproxVerdict,
    BoundsRow, EstimatorParams, RatioVerdict,
};
pub use oracle::{AnnotationOracle, LabelSource, RankedPredictions, VecLabels};
pub use precision::{decomposition_check, delta_precision, monotonicity_onset, precision_at_yield, precision_curve, Onset};

pub use num_rational::Rational64;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("yield {y} out of range 1..={m}")]
    YieldOutOfRange { y: usize, m: usize },
    #[error("Δ must divide y (y = {y}, Δ = {delta})")]
    NotDivisible { y: usize, delta: usize },
    #[error("invalid estimator parameters: {0}")]
    InvalidParams(String),
    #[error("checkpoint {k} is below ℓ = {ell}")]
    BelowOnset { k: u32, ell: u32 },
    #[error("checkpoint {k} has yield {y} beyond the {m} ranked predictions")]
    CheckpointTooLarge { k: u32, y: usize, m: usize },
    #[error("yield {y} is below y_ℓ = {y_ell}")]
    YieldBelowOnset { y: usize, y_ell: usize },
    #[error("lower bound is zero; ratio is indeterminate")]
    Indeterminate,
    #[error("label source failed: {0}")]
    Label(String),
}
