//! Seeded synthetic records for tests, benchmarks and demos.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::estimation::TimeSeries;
use crate::filterbank::spectral_radius;
use crate::freqgrid::RMatrix;

/// Samples discarded before the record starts, so the recursion forgets its
/// zero initial state.
pub const DEFAULT_BURN_IN: usize = 1000;

/// Scalar ARMA record `x(t) = Σ a_k x(t-k) + e(t) + Σ b_k e(t-k)` driven by
/// Gaussian noise with standard deviation `noise_std`.
pub fn arma(ar: &[f64], ma: &[f64], noise_std: f64, len: usize, seed: u64) -> Result<TimeSeries> {
    if !(noise_std > 0.0 && noise_std.is_finite()) {
        return Err(Error::Parameter(format!("noise level must be positive, got {noise_std}")));
    }
    if !ar.is_empty() {
        let p = ar.len();
        let companion = RMatrix::from_fn(p, p, |i, j| {
            if i == 0 {
                ar[j]
            } else if i == j + 1 {
                1.0
            } else {
                0.0
            }
        });
        let radius = spectral_radius(&companion);
        if radius >= 1.0 {
            return Err(Error::Unstable(radius));
        }
    }
    let noise = Normal::new(0.0, noise_std).map_err(|e| Error::Parameter(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total = len + DEFAULT_BURN_IN;
    let e: Vec<f64> = (0..total).map(|_| noise.sample(&mut rng)).collect();
    let mut x = vec![0.0; total];
    for t in 0..total {
        let mut v = e[t];
        for (k, b) in ma.iter().enumerate() {
            if t > k {
                v += b * e[t - k - 1];
            }
        }
        for (k, a) in ar.iter().enumerate() {
            if t > k {
                v += a * x[t - k - 1];
            }
        }
        x[t] = v;
    }
    TimeSeries::scalar(&x[DEFAULT_BURN_IN..])
}

/// Independent standard Gaussian channels.
pub fn white_noise(len: usize, channels: usize, seed: u64) -> Result<TimeSeries> {
    let noise = Normal::new(0.0, 1.0).map_err(|e| Error::Parameter(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    TimeSeries::new(RMatrix::from_fn(len, channels, |_, _| noise.sample(&mut rng)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arma_is_reproducible() {
        let a = arma(&[0.5], &[0.2], 1.0, 64, 9).unwrap();
        let b = arma(&[0.5], &[0.2], 1.0, 64, 9).unwrap();
        let c = arma(&[0.5], &[0.2], 1.0, 64, 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.len(), 64);
    }

    #[test]
    fn ar1_variance_is_close_to_theory() {
        let x = arma(&[0.5], &[], 1.0, 50_000, 1).unwrap();
        let var = x.data().iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
        assert!((var - 4.0 / 3.0).abs() < 0.05);
    }

    #[test]
    fn unstable_ar_is_rejected() {
        assert!(matches!(arma(&[1.1], &[], 1.0, 10, 0), Err(Error::Unstable(_))));
    }

    #[test]
    fn white_noise_shape() {
        let w = white_noise(100, 2, 0).unwrap();
        assert_eq!((w.len(), w.channels()), (100, 2));
    }
}
