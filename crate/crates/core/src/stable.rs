//! Positive (one-sided) stable variates.
//!
//! The sampler draws `S > 0` with Laplace transform
//!
//! ```text
//! E[exp(-λ S)] = exp(-λ^a),   0 < a < 1,
//! ```
//!
//! which is the normalization under which `exp(-|t|^α)` is a Gaussian scale
//! mixture over `S ~ S⁺(α/2)`. Draws use the Kanter form of the
//! Chambers–Mallows–Stuck construction for totally skewed stables, with
//! `U ~ Unif(0, π)` and `W ~ Exp(1)`:
//!
//! ```text
//! S = [ sin(a U)^a · sin((1-a) U)^(1-a) / sin U ]^(1/a) · W^(-(1-a)/a)
//! ```
//!
//! evaluated in log space. Heavy-tailed draws are returned as-is.

use rand::distr::{Distribution, Open01};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Seeded random stream used throughout the crate.
pub type Stream = ChaCha8Rng;

/// Creates the stream for `seed`. Identical seeds yield identical sequences.
pub fn stream(seed: u64) -> Stream {
    Stream::seed_from_u64(seed)
}

/// Creates an independent sub-stream of `seed` (ChaCha stream id `id`).
pub fn substream(seed: u64, id: u64) -> Stream {
    let mut rng = Stream::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Index and seed of a positive-stable stream.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StableSpec {
    /// Stability index of the one-sided law, in `(0, 1)`.
    pub alpha0: f64,
    pub seed: u64,
}

/// The positive `alpha0`-stable law, normalized by its Laplace transform.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PositiveStable {
    alpha0: f64,
}

impl PositiveStable {
    pub fn new(alpha0: f64) -> Result<Self> {
        if !(alpha0 > 0.0 && alpha0 < 1.0) {
            return Err(Error::Config(format!(
                "positive-stable index must lie in (0, 1), got {alpha0}"
            )));
        }
        Ok(Self { alpha0 })
    }

    pub fn alpha0(&self) -> f64 {
        self.alpha0
    }

    /// Laplace transform `exp(-λ^alpha0)`.
    pub fn laplace(&self, lambda: f64) -> f64 {
        (-lambda.powf(self.alpha0)).exp()
    }
}

impl Distribution<f64> for PositiveStable {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let a = self.alpha0;
        let u: f64 = PI * Distribution::<f64>::sample(&Open01, rng);
        let w = -Distribution::<f64>::sample(&Open01, rng).ln();
        let log_a = (a * (a * u).sin().ln() + (1.0 - a) * ((1.0 - a) * u).sin().ln()
            - u.sin().ln())
            / a;
        (log_a - (1.0 - a) / a * w.ln()).exp()
    }
}

/// Draws `count` positive-stable variates from the stream seeded by `spec.seed`.
pub fn sample_positive_stable(spec: &StableSpec, count: usize) -> Result<Vec<f64>> {
    let law = PositiveStable::new(spec.alpha0)?;
    let mut rng = stream(spec.seed);
    Ok(law.sample_iter(&mut rng).take(count).collect())
}

/// One row of a Laplace-transform check.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LaplaceCheck {
    pub lambda: f64,
    pub empirical: f64,
    pub target: f64,
    pub std_error: f64,
    /// `|empirical - target| > 4 · std_error`.
    pub flagged: bool,
}

/// Flag threshold of a Laplace check, in Monte Carlo standard errors.
pub const LAPLACE_FLAG_SE: f64 = 4.0;

/// Compares `mean(exp(-λ S_i))` with `exp(-λ^alpha0)` for each λ.
///
/// `alpha0 = 1` is accepted here and means the point mass at 1, so it can be
/// used on draws from a pinned chain.
pub fn laplace_check_draws(draws: &[f64], alpha0: f64, lambdas: &[f64]) -> Vec<LaplaceCheck> {
    let n = draws.len() as f64;
    lambdas
        .iter()
        .map(|&lambda| {
            // Shifted sums: exact for constant draws, stable otherwise.
            let shift = draws.first().map_or(0.0, |x| (-lambda * x).exp());
            let (sum, sum_sq) = draws.iter().fold((0.0, 0.0), |(s, q), &x| {
                let d = (-lambda * x).exp() - shift;
                (s + d, q + d * d)
            });
            let mean = shift + sum / n;
            let var = ((sum_sq - sum * sum / n) / (n - 1.0)).max(0.0);
            let std_error = (var / n).sqrt();
            let target = (-lambda.powf(alpha0)).exp();
            LaplaceCheck {
                lambda,
                empirical: mean,
                target,
                std_error,
                flagged: (mean - target).abs() > LAPLACE_FLAG_SE * std_error,
            }
        })
        .collect()
}

/// Samples `count` draws from `spec` and runs [`laplace_check_draws`] on them.
pub fn laplace_transform_check(
    spec: &StableSpec,
    lambdas: &[f64],
    count: usize,
) -> Result<Vec<LaplaceCheck>> {
    if count < 1000 {
        return Err(Error::Config(format!(
            "laplace check needs at least 1000 draws, got {count}"
        )));
    }
    if let Some(bad) = lambdas.iter().find(|l| !(**l > 0.0 && l.is_finite())) {
        return Err(Error::Config(format!("lambda must be positive, got {bad}")));
    }
    let draws = sample_positive_stable(spec, count)?;
    Ok(laplace_check_draws(&draws, spec.alpha0, lambdas))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_out_of_range_index() {
        for a in [0.0, 1.0, -0.2, 1.5, f64::NAN] {
            assert!(PositiveStable::new(a).is_err(), "{a}");
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let spec = StableSpec { alpha0: 0.5, seed: 42 };
        let a = sample_positive_stable(&spec, 100).unwrap();
        let b = sample_positive_stable(&spec, 100).unwrap();
        assert_eq!(a, b);
        let c = sample_positive_stable(&StableSpec { seed: 43, ..spec }, 100).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn laplace_at_one_for_three_quarters() {
        let spec = StableSpec { alpha0: 0.75, seed: 7 };
        let rows = laplace_transform_check(&spec, &[1.0], 100_000).unwrap();
        assert!((rows[0].target - 0.367_879_441_171_442_3).abs() < 1e-15);
        assert!((rows[0].empirical - rows[0].target).abs() < 3.0 * rows[0].std_error);
    }

    #[test]
    fn laplace_at_four_for_half() {
        let spec = StableSpec { alpha0: 0.5, seed: 8 };
        let rows = laplace_transform_check(&spec, &[4.0], 100_000).unwrap();
        assert!((rows[0].target - (-2.0f64).exp()).abs() < 1e-15);
        assert!((rows[0].empirical - rows[0].target).abs() < 3.0 * rows[0].std_error);
    }

    #[test]
    fn quarter_index_not_flagged() {
        let spec = StableSpec { alpha0: 0.25, seed: 9 };
        let rows = laplace_transform_check(&spec, &[0.5, 1.0, 2.0], 100_000).unwrap();
        assert!(rows.iter().all(|r| !r.flagged), "{rows:?}");
    }

    #[test]
    fn point_mass_check_is_exact() {
        let ones = vec![1.0; 5000];
        for r in laplace_check_draws(&ones, 1.0, &[0.5, 1.0, 3.0]) {
            assert_eq!(r.empirical, (-r.lambda).exp());
            assert_eq!(r.std_error, 0.0);
            assert!(!r.flagged);
        }
    }

    #[test]
    fn check_validates_parameters() {
        let spec = StableSpec { alpha0: 0.5, seed: 1 };
        assert!(laplace_transform_check(&spec, &[1.0], 999).is_err());
        assert!(laplace_transform_check(&spec, &[0.0], 1000).is_err());
    }

    #[test]
    fn substreams_differ() {
        let mut a = substream(5, 0);
        let mut b = substream(5, 1);
        let x: u64 = a.random();
        let y: u64 = b.random();
        assert_ne!(x, y);
        let mut c = stream(5);
        assert_eq!(x, c.random::<u64>());
    }
}
