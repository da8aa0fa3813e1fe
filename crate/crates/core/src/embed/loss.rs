//! Logistic losses over HolE scores.

/// Numerically stable logistic sigmoid.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(m))` without overflow.
pub fn softplus(m: f64) -> f64 {
    if m > 30.0 {
        m + (-m).exp().ln_1p()
    } else if m < -30.0 {
        m.exp()
    } else {
        m.exp().ln_1p()
    }
}

/// `log(1 + exp(−y·score))` for `y ∈ {−1, +1}`.
pub fn binary_loss(score: f64, y: f64) -> f64 {
    softplus(-y * score)
}

/// Derivative of [`binary_loss`] with respect to the score: `−y·σ(−y·score)`.
pub fn binary_loss_grad(score: f64, y: f64) -> f64 {
    -y * sigmoid(-y * score)
}

fn log_sum_exp(scores: &[f64; 3]) -> f64 {
    let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + scores.iter().map(|s| (s - m).exp()).sum::<f64>().ln()
}

/// Softmax class probabilities.
pub fn softmax(scores: &[f64; 3]) -> [f64; 3] {
    let lse = log_sum_exp(scores);
    scores.map(|s| (s - lse).exp())
}

/// Negative log softmax probability of `class` (1-based: All=1, Some=2, None=3).
pub fn multiclass_loss(scores: &[f64; 3], class: usize) -> f64 {
    debug_assert!((1..=3).contains(&class));
    log_sum_exp(scores) - scores[class - 1]
}

/// Gradient of [`multiclass_loss`] with respect to the three class scores.
pub fn multiclass_loss_grad(scores: &[f64; 3], class: usize) -> [f64; 3] {
    let mut g = softmax(scores);
    g[class - 1] -= 1.0;
    g
}

/// Log-odds of a positive label (All or Some) against None.
pub fn positive_log_odds(scores: &[f64; 3]) -> f64 {
    let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let pos = ((scores[0] - m).exp() + (scores[1] - m).exp()).ln() + m;
    pos - scores[2]
}
