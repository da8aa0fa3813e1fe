//! Circular correlation and convolution.
//!
//! The direct O(d²) summations are the reference path used by training and scoring.
//! [`FftCorrelator`] computes the same correlation in O(d log d) via
//! `ifft(conj(fft(a)) ⊙ fft(b))`.

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::EmbedError;

fn check_lengths(a: &[f64], b: &[f64]) -> Result<(), EmbedError> {
    if a.len() != b.len() {
        return Err(EmbedError::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    if a.is_empty() {
        return Err(EmbedError::LengthMismatch { left: 0, right: 0 });
    }
    Ok(())
}

/// `[a ∘ b]_k = Σ_i a_i · b_{(i+k) mod d}`.
pub fn circular_correlation(a: &[f64], b: &[f64]) -> Result<Vec<f64>, EmbedError> {
    check_lengths(a, b)?;
    let mut out = vec![0.0; a.len()];
    correlate_into(a, b, &mut out);
    Ok(out)
}

/// Unchecked correlation into a caller-provided buffer; all three slices must have length d.
pub fn correlate_into(a: &[f64], b: &[f64], out: &mut [f64]) {
    let d = a.len();
    for (k, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        // Split the index range to avoid a modulo in the inner loop.
        for i in 0..d - k {
            acc += a[i] * b[i + k];
        }
        for i in d - k..d {
            acc += a[i] * b[i + k - d];
        }
        *o = acc;
    }
}

/// `[a * b]_j = Σ_i a_i · b_{(j−i) mod d}`, the adjoint of correlation in its second argument.
pub fn circular_convolution(a: &[f64], b: &[f64]) -> Result<Vec<f64>, EmbedError> {
    check_lengths(a, b)?;
    let mut out = vec![0.0; a.len()];
    convolve_into(a, b, &mut out);
    Ok(out)
}

pub fn convolve_into(a: &[f64], b: &[f64], out: &mut [f64]) {
    let d = a.len();
    for (j, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for i in 0..=j {
            acc += a[i] * b[j - i];
        }
        for i in j + 1..d {
            acc += a[i] * b[j + d - i];
        }
        *o = acc;
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Checks `[a∘b]_k = [b∘a]_{(d−k) mod d}` for every k within 1e−10, using `corr`
/// as the correlation routine under test.
pub fn flip_check_with<F>(corr: F, a: &[f64], b: &[f64]) -> bool
where
    F: Fn(&[f64], &[f64]) -> Vec<f64>,
{
    if a.len() != b.len() || a.is_empty() {
        return false;
    }
    let d = a.len();
    let ab = corr(a, b);
    let ba = corr(b, a);
    (0..d).all(|k| (ab[k] - ba[(d - k) % d]).abs() <= 1e-10)
}

/// [`flip_check_with`] applied to the reference correlation.
pub fn flip_check(a: &[f64], b: &[f64]) -> bool {
    flip_check_with(
        |x, y| {
            let mut out = vec![0.0; x.len()];
            correlate_into(x, y, &mut out);
            out
        },
        a,
        b,
    )
}

/// Transform-based correlation with cached plans for one dimension.
pub struct FftCorrelator {
    dim: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl FftCorrelator {
    pub fn new(dim: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            dim,
            forward: planner.plan_fft_forward(dim),
            inverse: planner.plan_fft_inverse(dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn correlate(&self, a: &[f64], b: &[f64]) -> Result<Vec<f64>, EmbedError> {
        check_lengths(a, b)?;
        if a.len() != self.dim {
            return Err(EmbedError::LengthMismatch {
                left: a.len(),
                right: self.dim,
            });
        }
        let mut fa: Vec<Complex64> = a.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        let mut fb: Vec<Complex64> = b.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        self.forward.process(&mut fa);
        self.forward.process(&mut fb);
        let mut prod: Vec<Complex64> = fa.iter().zip(&fb).map(|(x, y)| x.conj() * y).collect();
        self.inverse.process(&mut prod);
        let scale = 1.0 / self.dim as f64;
        Ok(prod.iter().map(|c| c.re * scale).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn naive(a: &[f64], b: &[f64]) -> Vec<f64> {
        let d = a.len();
        (0..d)
            .map(|k| (0..d).map(|i| a[i] * b[(i + k) % d]).sum())
            .collect()
    }

    fn random_vec(rng: &mut impl Rng, d: usize) -> Vec<f64> {
        (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn basis_vector_is_identity() {
        let b = vec![0.3, -1.2, 4.0, 0.5];
        let e0 = vec![1.0, 0.0, 0.0, 0.0];
        assert_eq!(circular_correlation(&e0, &b).unwrap(), b);
    }

    #[test]
    fn zeroth_component_is_dot_product() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let a = random_vec(&mut rng, 9);
        let b = random_vec(&mut rng, 9);
        let c = circular_correlation(&a, &b).unwrap();
        assert!((c[0] - dot(&a, &b)).abs() < 1e-14);
    }

    #[test]
    fn matches_double_loop_d8() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let a = random_vec(&mut rng, 8);
            let b = random_vec(&mut rng, 8);
            let got = circular_correlation(&a, &b).unwrap();
            for (x, y) in got.iter().zip(naive(&a, &b)) {
                assert!((x - y).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn length_mismatch_is_an_error() {
        assert!(matches!(
            circular_correlation(&[1.0, 2.0], &[1.0]),
            Err(EmbedError::LengthMismatch { left: 2, right: 1 })
        ));
        assert!(circular_convolution(&[], &[]).is_err());
    }

    #[test]
    fn flip_identity() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let a = random_vec(&mut rng, 16);
        let b = random_vec(&mut rng, 16);
        assert!(flip_check(&a, &a));
        assert!(flip_check(&a, &b));
    }

    #[test]
    fn flip_check_catches_a_broken_routine() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let a = random_vec(&mut rng, 16);
        let b = random_vec(&mut rng, 16);
        // Off-by-one shift: b_{(i+k+1) mod d}.
        let broken = |x: &[f64], y: &[f64]| {
            let d = x.len();
            (0..d)
                .map(|k| (0..d).map(|i| x[i] * y[(i + k + 1) % d]).sum())
                .collect::<Vec<f64>>()
        };
        assert!(!flip_check_with(broken, &a, &b));
    }

    #[test]
    fn convolution_matches_definition() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let a = random_vec(&mut rng, 11);
        let b = random_vec(&mut rng, 11);
        let got = circular_convolution(&a, &b).unwrap();
        let d = a.len();
        for (j, g) in got.iter().enumerate() {
            let want: f64 = (0..d).map(|i| a[i] * b[(j + d - i) % d]).sum();
            assert!((g - want).abs() < 1e-12);
        }
    }

    #[test]
    fn fft_path_agrees() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(6);
        for d in [1, 2, 7, 8, 64, 100, 128] {
            let f = FftCorrelator::new(d);
            let a = random_vec(&mut rng, d);
            let b = random_vec(&mut rng, d);
            let fast = f.correlate(&a, &b).unwrap();
            for (x, y) in fast.iter().zip(naive(&a, &b)) {
                assert!((x - y).abs() <= 1e-9, "d={d}");
            }
        }
    }

    proptest! {
        #[test]
        fn correlation_is_bilinear(
            d in 1usize..40,
            seed in any::<u64>(),
            alpha in -3.0f64..3.0,
        ) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let a = random_vec(&mut rng, d);
            let a2 = random_vec(&mut rng, d);
            let b = random_vec(&mut rng, d);
            let b2 = random_vec(&mut rng, d);
            let sum_a: Vec<f64> = a.iter().zip(&a2).map(|(x, y)| x + alpha * y).collect();
            let sum_b: Vec<f64> = b.iter().zip(&b2).map(|(x, y)| x + alpha * y).collect();
            let lhs1 = circular_correlation(&sum_a, &b).unwrap();
            let lhs2 = circular_correlation(&a, &sum_b).unwrap();
            let ab = circular_correlation(&a, &b).unwrap();
            let a2b = circular_correlation(&a2, &b).unwrap();
            let ab2 = circular_correlation(&a, &b2).unwrap();
            for k in 0..d {
                prop_assert!((lhs1[k] - (ab[k] + alpha * a2b[k])).abs() <= 1e-10);
                prop_assert!((lhs2[k] - (ab[k] + alpha * ab2[k])).abs() <= 1e-10);
            }
        }

        #[test]
        fn flip_holds_for_all_inputs(d in 1usize..64, seed in any::<u64>()) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let a = random_vec(&mut rng, d);
            let b = random_vec(&mut rng, d);
            prop_assert!(flip_check(&a, &b));
        }
    }
}
