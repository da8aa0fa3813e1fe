//! Seeded synthetic truth streams for exercising the estimators.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Independent `Bernoulli(p)` values.
pub fn bernoulli(len: usize, p: f64, seed: u64) -> Vec<bool> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.random_bool(p.clamp(0.0, 1.0))).collect()
}

/// Decaying density `min(1, c/(i+c))` at 1-based rank `i`.
pub fn decay(c: f64) -> impl Fn(usize) -> f64 {
    move |i| (c / (i as f64 + c)).min(1.0)
}

/// Independent values with `P(v_i = 1) = min(1, c/(i+c))`.
pub fn iid_decaying(len: usize, c: f64, seed: u64) -> Vec<bool> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f = decay(c);
    (1..=len).map(|i| rng.random::<f64>() < f(i)).collect()
}

/// Values `v_i = [u_{i mod period} < f(i)]` with one uniform draw per residue class.
/// Each `v_i` is marginally `Bernoulli(f(i))`, and whenever `f` is non-increasing so is
/// every window precision of width `period`: sliding the window swaps two ranks of the
/// same residue.
pub fn coupled(len: usize, period: usize, seed: u64, f: impl Fn(usize) -> f64) -> Vec<bool> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u: Vec<f64> = (0..period.max(1)).map(|_| rng.random()).collect();
    (1..=len).map(|i| u[i % u.len()] < f(i)).collect()
}

/// [`coupled`] with the decaying density `min(1, c/(i+c))`.
pub fn coupled_decaying(len: usize, c: f64, period: usize, seed: u64) -> Vec<bool> {
    coupled(len, period, seed, decay(c))
}
