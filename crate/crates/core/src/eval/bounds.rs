//! Geometric lower and upper estimators of precision at yield.
//!
//! Checkpoint yields are `y_j = round(α^j)`, forced strictly increasing, and the gap
//! `y_{j+1} − y_j` stands in for `α^j(α − 1)`:
//!
//! ```text
//! L = ⌊y_ℓ/Δ⌋·prc(y_ℓ) + Σ_{j=ℓ}^{k−1} ⌊(y_{j+1}−y_j)/Δ⌋·prc(y_{j+1}, Δ)
//! U = ⌈y_ℓ/Δ⌉·prc(y_ℓ) + Σ_{j=ℓ}^{k−1} ⌈(y_{j+1}−y_j)/Δ⌉·prc(y_j, Δ)
//! ```
//!
//! `L` and `U` count Δ-blocks of true values, so they are compared with precision after
//! normalizing by `Δ/y_k`.

use num_rational::Rational64;
use serde::{Deserialize, Serialize};

use super::precision::{delta_precision, precision_at_yield};
use super::{AnnotationOracle, EvalError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorParams {
    pub alpha: f64,
    pub delta: usize,
    /// Yield from which Δ-precision is taken to be non-increasing.
    pub y_tilde: usize,
}

impl EstimatorParams {
    pub fn new(alpha: f64, delta: usize, y_tilde: usize) -> Result<Self, EvalError> {
        let p = Self { alpha, delta, y_tilde };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        if !(self.alpha.is_finite() && self.alpha > 1.0) {
            return Err(EvalError::InvalidParams(format!("α must exceed 1, got {}", self.alpha)));
        }
        if self.delta == 0 {
            return Err(EvalError::InvalidParams("Δ must be at least 1".into()));
        }
        if self.y_tilde < self.delta {
            return Err(EvalError::InvalidParams(format!(
                "ỹ = {} must be at least Δ = {}",
                self.y_tilde, self.delta
            )));
        }
        Ok(())
    }

    /// `ℓ = ⌈log_α ỹ⌉`, computed as the least `ℓ` with `α^ℓ ≥ ỹ`.
    pub fn ell(&self) -> u32 {
        let target = self.y_tilde as f64;
        let mut l = 0u32;
        while self.alpha.powi(l as i32) < target * (1.0 - 1e-12) {
            l += 1;
        }
        l
    }
}

/// `y_0, …, y_k` with `y_j = round(α^j)`, bumped where needed to stay strictly increasing.
/// Yields saturate at `usize::MAX`, far beyond any ranked list.
pub fn checkpoint_yields(alpha: f64, k: u32) -> Vec<usize> {
    let mut ys: Vec<usize> = Vec::with_capacity(k as usize + 1);
    for j in 0..=k {
        let raw = alpha.powi(j as i32).round().max(1.0) as usize;
        let y = match ys.last() {
            Some(&prev) if raw <= prev => prev.saturating_add(1),
            _ => raw,
        };
        ys.push(y);
    }
    ys
}

/// One checkpoint of the estimator report.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundsRow {
    pub k: u32,
    pub ell: u32,
    pub y_ell: usize,
    pub y_k: usize,
    pub lower: Rational64,
    pub upper: Rational64,
    /// `(Δ/y_k)·L`.
    pub lower_norm: Rational64,
    /// `(Δ/y_k)·U`.
    pub upper_norm: Rational64,
    /// Exact `prc(y_k)`, filled in only when a full scan is affordable.
    pub exact: Option<Rational64>,
    /// Distinct ranks the oracle had resolved after computing this row.
    pub queries: usize,
}

impl BoundsRow {
    /// The query budget the estimator is entitled to: `y_ℓ + Δ·(k − ℓ + 1)`.
    pub fn query_budget(&self, delta: usize) -> usize {
        self.y_ell + delta * (self.k - self.ell + 1) as usize
    }
}

fn q(n: usize) -> Rational64 {
    Rational64::from_integer(n as i64)
}

/// L and U at checkpoint `k ≥ ℓ`.
pub fn bound_estimators(o: &mut AnnotationOracle<'_>, params: &EstimatorParams, k: u32) -> Result<BoundsRow, EvalError> {
    params.validate()?;
    let ell = params.ell();
    if k < ell {
        return Err(EvalError::BelowOnset { k, ell });
    }
    let ys = checkpoint_yields(params.alpha, k);
    let y_k = ys[k as usize];
    if y_k > o.len() {
        return Err(EvalError::CheckpointTooLarge { k, y: y_k, m: o.len() });
    }
    let d = params.delta;
    let y_ell = ys[ell as usize];
    let head = precision_at_yield(o, y_ell)?;
    let mut lower = q(y_ell / d) * head;
    let mut upper = q(y_ell.div_ceil(d)) * head;
    for j in ell as usize..k as usize {
        let gap = ys[j + 1] - ys[j];
        lower += q(gap / d) * delta_precision(o, ys[j + 1], d)?;
        upper += q(gap.div_ceil(d)) * delta_precision(o, ys[j], d)?;
    }
    let norm = Rational64::new(d as i64, y_k as i64);
    Ok(BoundsRow {
        k,
        ell,
        y_ell,
        y_k,
        lower,
        upper,
        lower_norm: norm * lower,
        upper_norm: norm * upper,
        exact: None,
        queries: o.queries(),
    })
}

/// Rows for each checkpoint in `ks`, sharing one oracle so queries accumulate.
pub fn bounds_report(o: &mut AnnotationOracle<'_>, params: &EstimatorParams, ks: &[u32]) -> Result<Vec<BoundsRow>, EvalError> {
    ks.iter().map(|&k| bound_estimators(o, params, k)).collect()
}

pub(crate) fn to_f64(r: Rational64) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

/// Outcome of comparing `α·L` with `U`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioVerdict {
    pub alpha_lower: f64,
    pub upper: f64,
    /// `(1 + α)(k − ℓ + 1)`: each of the `k − ℓ + 1` floor/ceiling pairs can cost up
    /// to `α` on the lower side and 1 on the upper side.
    pub slack: f64,
    pub holds: bool,
    /// Whether floors equal ceilings: integer `α` and `Δ` dividing `y_ℓ` and every gap.
    pub exact_applicable: bool,
    pub holds_exact: bool,
}

/// Checks `α·L ≥ U − slack`, and `α·L ≥ U` outright when rounding cannot interfere.
pub fn ratio_check(row: &BoundsRow, params: &EstimatorParams) -> Result<RatioVerdict, EvalError> {
    if row.lower == Rational64::from_integer(0) {
        return Err(EvalError::Indeterminate);
    }
    let alpha_lower = params.alpha * to_f64(row.lower);
    let upper = to_f64(row.upper);
    let slack = (1.0 + params.alpha) * (row.k - row.ell + 1) as f64;
    let ys = checkpoint_yields(params.alpha, row.k);
    let d = params.delta;
    let integral_alpha = params.alpha.fract() == 0.0;
    let exact_applicable = integral_alpha
        && ys[row.ell as usize] % d == 0
        && (row.ell as usize..row.k as usize).all(|j| (ys[j + 1] - ys[j]) % d == 0);
    let eps = 1e-9 * upper.abs().max(1.0);
    let holds_exact = alpha_lower >= upper - eps;
    Ok(RatioVerdict {
        alpha_lower,
        upper,
        slack,
        holds: alpha_lower + slack >= upper - eps,
        exact_applicable,
        holds_exact,
    })
}

/// Outcome of bounding `prc(y)` between the nearest checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApproxVerdict {
    pub y: usize,
    pub k_minus: u32,
    pub k_plus: u32,
    pub exact: f64,
    /// `L̂` at `k₊`.
    pub lower: f64,
    /// `Û` at `k₋`.
    pub upper: f64,
    /// `prc(y)/(α·ρ₊) − s₊/α ≤ L̂(k₊) ≤ prc(y)` with `ρ₊ = y_{k₊}/y`.
    pub lower_ok: bool,
    /// `prc(y) ≤ Û(k₋) ≤ α·ρ₋·prc(y) + s₋` with `ρ₋ = y/y_{k₋}`.
    pub upper_ok: bool,
}

/// Checks both approximation sides at an arbitrary yield `y ≥ y_ℓ`. The factors
/// `ρ₊, ρ₋ ≤ α` replace the second `α` so that integer rounding of checkpoints is
/// accounted for exactly; `s` is the normalized ratio slack. Charges `y` queries for
/// the exact value.
pub fn approximation_check(o: &mut AnnotationOracle<'_>, params: &EstimatorParams, y: usize) -> Result<ApproxVerdict, EvalError> {
    params.validate()?;
    let ell = params.ell();
    let mut ys = checkpoint_yields(params.alpha, ell);
    let y_ell = ys[ell as usize];
    if y < y_ell {
        return Err(EvalError::YieldBelowOnset { y, y_ell });
    }
    if y > o.len() {
        return Err(EvalError::YieldOutOfRange { y, m: o.len() });
    }
    while *ys.last().expect("non-empty") < y {
        ys = checkpoint_yields(params.alpha, ys.len() as u32);
    }
    let k_plus = (ys.len() - 1) as u32;
    let k_minus = if ys[k_plus as usize] == y { k_plus } else { k_plus - 1 };
    let lo = bound_estimators(o, params, k_plus)?;
    let hi = bound_estimators(o, params, k_minus)?;
    let exact = to_f64(precision_at_yield(o, y)?);
    let a = params.alpha;
    let slack = |row: &BoundsRow| (1.0 + a) * (row.k - row.ell + 1) as f64 * params.delta as f64 / row.y_k as f64;
    let rho_plus = lo.y_k as f64 / y as f64;
    let rho_minus = y as f64 / hi.y_k as f64;
    let lower = to_f64(lo.lower_norm);
    let upper = to_f64(hi.upper_norm);
    let eps = 1e-12;
    Ok(ApproxVerdict {
        y,
        k_minus,
        k_plus,
        exact,
        lower,
        upper,
        lower_ok: lower <= exact + eps && lower >= exact / (a * rho_plus) - slack(&lo) / a - eps,
        upper_ok: upper >= exact - eps && upper <= a * rho_minus * exact + slack(&hi) + eps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::stream;

    fn r(n: i64, d: i64) -> Rational64 {
        Rational64::new(n, d)
    }

    #[test]
    fn params() {
        assert!(EstimatorParams::new(1.0, 4, 8).is_err());
        assert!(EstimatorParams::new(2.0, 0, 8).is_err());
        assert!(EstimatorParams::new(2.0, 16, 8).is_err());
        assert_eq!(EstimatorParams::new(2.0, 64, 256).unwrap().ell(), 8);
        assert_eq!(EstimatorParams::new(2.0, 64, 257).unwrap().ell(), 9);
        // log_1.5 64 ≈ 10.26
        assert_eq!(EstimatorParams::new(1.5, 32, 64).unwrap().ell(), 11);
    }

    #[test]
    fn yields_are_strictly_increasing() {
        assert_eq!(checkpoint_yields(2.0, 5), vec![1, 2, 4, 8, 16, 32]);
        let ys = checkpoint_yields(1.5, 30);
        assert!(ys.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(ys[30], 1.5f64.powi(30).round() as usize);
        assert_eq!(&ys[..4], &[1, 2, 3, 4]);
    }

    #[test]
    fn all_true_bounds() {
        let p = EstimatorParams::new(2.0, 1, 8).unwrap();
        assert_eq!(p.ell(), 3);
        let mut o = AnnotationOracle::from_truth(vec![true; 64]);
        let row = bound_estimators(&mut o, &p, 5).unwrap();
        // 8·1 + 8·1 + 16·1
        assert_eq!(row.lower, r(32, 1));
        assert_eq!(row.lower_norm, r(1, 1));
        assert_eq!(row.upper_norm, r(1, 1));
        let v = ratio_check(&row, &p).unwrap();
        assert!(v.exact_applicable && v.holds_exact);
    }

    #[test]
    fn degenerate_checkpoint() {
        let p = EstimatorParams::new(2.0, 3, 8).unwrap();
        let labels = stream::bernoulli(64, 0.5, 2);
        let mut o = AnnotationOracle::from_truth(labels.clone());
        let row = bound_estimators(&mut o, &p, 3).unwrap();
        let head = r(labels[..8].iter().filter(|v| **v).count() as i64, 8);
        assert_eq!(row.lower, r(2, 1) * head);
        assert_eq!(row.upper, r(3, 1) * head);
        assert!(matches!(bound_estimators(&mut o, &p, 2), Err(EvalError::BelowOnset { .. })));
        assert!(matches!(bound_estimators(&mut o, &p, 7), Err(EvalError::CheckpointTooLarge { .. })));
    }

    /// Direct evaluation of the definitions from a full truth vector.
    fn direct(labels: &[bool], p: &EstimatorParams, k: u32) -> (Rational64, Rational64) {
        let ys = checkpoint_yields(p.alpha, k);
        let ell = p.ell() as usize;
        let cnt = |lo: usize, hi: usize| labels[lo..hi].iter().filter(|v| **v).count() as i64;
        let d = p.delta;
        let win = |y: usize| if y < d { r(cnt(0, y), y as i64) } else { r(cnt(y - d, y), d as i64) };
        let head = r(cnt(0, ys[ell]), ys[ell] as i64);
        let mut l = r((ys[ell] / d) as i64, 1) * head;
        let mut u = r(ys[ell].div_ceil(d) as i64, 1) * head;
        for j in ell..k as usize {
            let g = ys[j + 1] - ys[j];
            l += r((g / d) as i64, 1) * win(ys[j + 1]);
            u += r(g.div_ceil(d) as i64, 1) * win(ys[j]);
        }
        (l, u)
    }

    #[test]
    fn sandwich_on_coupled_decaying_stream() {
        let labels = stream::coupled_decaying(65_536, 4096.0, 64, 7);
        let p = EstimatorParams::new(2.0, 64, 256).unwrap();
        let mut o = AnnotationOracle::from_truth(labels.clone());
        for k in p.ell()..=16 {
            let row = bound_estimators(&mut o, &p, k).unwrap();
            assert_eq!((row.lower, row.upper), direct(&labels, &p, k));
            let exact = r(labels[..row.y_k].iter().filter(|v| **v).count() as i64, row.y_k as i64);
            assert!(row.lower_norm <= exact && exact <= row.upper_norm, "k={k}");
            assert!(row.queries <= row.query_budget(64), "k={k}: {} queries", row.queries);
            let v = ratio_check(&row, &p).unwrap();
            assert!(v.exact_applicable && v.holds_exact, "k={k}");
        }
    }

    #[test]
    fn ratio_with_awkward_delta() {
        for seed in 0..500 {
            let labels = stream::iid_decaying(4096, 512.0, seed);
            let p = EstimatorParams::new(2.0, 7, 64).unwrap();
            let mut o = AnnotationOracle::from_truth(labels);
            for k in p.ell()..=12 {
                let row = bound_estimators(&mut o, &p, k).unwrap();
                let v = ratio_check(&row, &p).unwrap();
                assert!(!v.exact_applicable);
                assert!(v.holds, "seed {seed} k {k}: {v:?}");
            }
        }
    }

    #[test]
    fn ratio_indeterminate_on_zero_lower() {
        let p = EstimatorParams::new(2.0, 4, 8).unwrap();
        let mut o = AnnotationOracle::from_truth(vec![false; 64]);
        let row = bound_estimators(&mut o, &p, 4).unwrap();
        assert!(matches!(ratio_check(&row, &p), Err(EvalError::Indeterminate)));
    }

    #[test]
    fn approximation_between_checkpoints() {
        let labels = stream::coupled_decaying(65_536, 4096.0, 64, 3);
        let p = EstimatorParams::new(2.0, 64, 256).unwrap();
        let mut o = AnnotationOracle::from_truth(labels);
        let v = approximation_check(&mut o, &p, 3000).unwrap();
        assert_eq!((v.k_minus, v.k_plus), (11, 12));
        assert!(v.lower_ok && v.upper_ok, "{v:?}");
        let v = approximation_check(&mut o, &p, 4096).unwrap();
        assert_eq!(v.k_minus, v.k_plus);
        assert!(v.lower_ok && v.upper_ok, "{v:?}");
        assert!(matches!(approximation_check(&mut o, &p, 100), Err(EvalError::YieldBelowOnset { .. })));
    }

    #[test]
    fn constant_density_has_wide_margin() {
        let labels = stream::coupled(32_768, 32, 5, |_| 0.6);
        let p = EstimatorParams::new(2.0, 32, 64).unwrap();
        let mut o = AnnotationOracle::from_truth(labels);
        let v = approximation_check(&mut o, &p, 10_016).unwrap();
        assert!(v.lower_ok && v.upper_ok, "{v:?}");
        assert!((v.lower - v.exact).abs() < 0.01 && (v.upper - v.exact).abs() < 0.01, "{v:?}");
    }
}
