//! Exact precision at yield and its Δ-local variant.

use num_rational::Rational64;
use serde::{Deserialize, Serialize};

use super::{AnnotationOracle, EvalError};

fn check_yield(o: &AnnotationOracle<'_>, y: usize) -> Result<(), EvalError> {
    if y == 0 || y > o.len() {
        return Err(EvalError::YieldOutOfRange { y, m: o.len() });
    }
    Ok(())
}

/// `prc(y) = (1/y)·Σ_{i≤y} v(t_i)`.
pub fn precision_at_yield(o: &mut AnnotationOracle<'_>, y: usize) -> Result<Rational64, EvalError> {
    check_yield(o, y)?;
    let n = o.count_true(1, y)?;
    Ok(Rational64::new(n as i64, y as i64))
}

/// `prc(y, Δ)`: precision over the window `y−Δ+1..=y`, or `prc(y)` when `y < Δ`.
pub fn delta_precision(o: &mut AnnotationOracle<'_>, y: usize, delta: usize) -> Result<Rational64, EvalError> {
    check_yield(o, y)?;
    if delta == 0 {
        return Err(EvalError::InvalidParams("Δ must be at least 1".into()));
    }
    if y < delta {
        return precision_at_yield(o, y);
    }
    let n = o.count_true(y - delta + 1, y)?;
    Ok(Rational64::new(n as i64, delta as i64))
}

/// Whether `prc(y) = (Δ/y)·Σ_{j=1..y/Δ} prc(jΔ, Δ)` holds exactly.
pub fn decomposition_check(o: &mut AnnotationOracle<'_>, y: usize, delta: usize) -> Result<bool, EvalError> {
    check_yield(o, y)?;
    if delta == 0 || y % delta != 0 {
        return Err(EvalError::NotDivisible { y, delta });
    }
    let lhs = precision_at_yield(o, y)?;
    let mut sum = Rational64::from_integer(0);
    for j in 1..=y / delta {
        sum += delta_precision(o, j * delta, delta)?;
    }
    Ok(lhs == Rational64::new(delta as i64, y as i64) * sum)
}

/// `(y, prc(y))` at each requested yield, for plotting.
pub fn precision_curve(o: &mut AnnotationOracle<'_>, yields: &[usize]) -> Result<Vec<(usize, Rational64)>, EvalError> {
    yields.iter().map(|&y| Ok((y, precision_at_yield(o, y)?))).collect()
}

/// Where the Δ-precision sequence settles into a non-increasing tail.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Onset {
    /// Smallest stride checkpoint from which the tail is non-increasing, or `m`.
    pub y_tilde: usize,
    /// False when no tail of at least two checkpoints qualifies.
    pub monotone: bool,
}

/// Scans `prc(y, Δ)` at `y = Δ, 2Δ, …` and returns the first checkpoint after which no
/// value exceeds any earlier tail value by more than `1/Δ`. Charges every scanned rank.
pub fn monotonicity_onset(o: &mut AnnotationOracle<'_>, delta: usize) -> Result<Onset, EvalError> {
    if delta == 0 {
        return Err(EvalError::InvalidParams("Δ must be at least 1".into()));
    }
    let m = o.len();
    let n = m / delta;
    let mut seq = Vec::with_capacity(n);
    for j in 1..=n {
        seq.push(delta_precision(o, j * delta, delta)?);
    }
    let tol = Rational64::new(1, delta as i64);
    // Walking backwards, point i extends the tail if no later point exceeds it by more
    // than the tolerance.
    let mut start = n;
    let mut tail_max: Option<Rational64> = None;
    for i in (0..n).rev() {
        let ok = tail_max.is_none_or(|mx| mx <= seq[i] + tol);
        if !ok {
            break;
        }
        start = i;
        tail_max = Some(tail_max.map_or(seq[i], |mx| mx.max(seq[i])));
    }
    if n < 2 || start + 2 > n {
        return Ok(Onset {
            y_tilde: m,
            monotone: false,
        });
    }
    Ok(Onset {
        y_tilde: (start + 1) * delta,
        monotone: true,
    })
}
