//! Dense SPD linear algebra: jittered Cholesky, Gaussian log-density,
//! conditional (kriging) moments and multivariate normal draws.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Jitter multipliers tried in order, relative to the mean diagonal.
pub const JITTER_LADDER: [f64; 4] = [0.0, 1e-10, 1e-8, 1e-6];

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Cholesky factor of a symmetric matrix, possibly after adding jitter.
#[derive(Clone, Debug)]
pub struct SpdFactor {
    chol: Cholesky<f64, Dyn>,
    jitter: f64,
}

impl SpdFactor {
    /// Lower-triangular `L` with `L Lᵀ = A + jitter · I`.
    pub fn lower(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    /// Absolute jitter added to the diagonal (0 when none was needed).
    pub fn jitter_applied(&self) -> f64 {
        self.jitter
    }

    pub fn dim(&self) -> usize {
        self.chol.l_dirty().nrows()
    }

    pub fn log_det(&self) -> f64 {
        2.0 * self.chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }

    /// Solves `L z = b`.
    pub fn solve_lower(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut z = b.clone();
        self.chol.l_dirty().solve_lower_triangular_unchecked_mut(&mut z);
        z
    }

    /// Solves `(A + jitter I) x = b`.
    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(b)
    }
}

/// Cholesky with the escalating jitter ladder `0, 1e-10·d̄, 1e-8·d̄, 1e-6·d̄`
/// where `d̄` is the mean diagonal.
pub fn factorize(a: &DMatrix<f64>) -> Result<SpdFactor> {
    if !a.is_square() {
        return Err(Error::Shape(format!(
            "cannot factorize a {}x{} matrix",
            a.nrows(),
            a.ncols()
        )));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::Overflow { layer: None });
    }
    let n = a.nrows();
    let mean_diag = if n == 0 { 0.0 } else { a.trace() / n as f64 };
    for step in JITTER_LADDER {
        let jitter = step * mean_diag;
        // Also catches a NaN mean diagonal.
        if step > 0.0 && jitter.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
            break;
        }
        let mut m = a.clone();
        for i in 0..n {
            m[(i, i)] += jitter;
        }
        if let Some(chol) = Cholesky::new(m) {
            return Ok(SpdFactor { chol, jitter });
        }
    }
    let min_eigenvalue = SymmetricEigen::new(a.clone())
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    Err(Error::NotPositiveDefinite { min_eigenvalue })
}

/// `log N(y | 0, A)` from a factor of `A`.
pub fn gaussian_loglik(y: &DVector<f64>, cov: &SpdFactor) -> Result<f64> {
    if y.len() != cov.dim() {
        return Err(Error::Shape(format!(
            "response has length {} but covariance is {}x{}",
            y.len(),
            cov.dim(),
            cov.dim()
        )));
    }
    let mut z = y.clone();
    cov.chol.l_dirty().solve_lower_triangular_unchecked_mut(&mut z);
    let quad = z.norm_squared();
    Ok(-0.5 * (quad + cov.log_det() + y.len() as f64 * LN_2PI))
}

/// Mean and covariance of test outputs given training outputs.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictiveMoments {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

/// Conditions a joint zero-mean Gaussian with covariance `lambda_joint`
/// (training points first) on the training outputs `y`:
///
/// ```text
/// μ* = Λ₂₁ Λ₁₁⁻¹ y
/// Λ* = Λ₂₂ − Λ₂₁ Λ₁₁⁻¹ Λ₁₂
/// ```
///
/// `Λ*` is returned symmetrized.
pub fn predictive_moments(lambda_joint: &DMatrix<f64>, y: &DVector<f64>) -> Result<PredictiveMoments> {
    let total = lambda_joint.nrows();
    let n = y.len();
    if !lambda_joint.is_square() || n > total {
        return Err(Error::Shape(format!(
            "joint covariance {}x{} does not fit {} training outputs",
            lambda_joint.nrows(),
            lambda_joint.ncols(),
            n
        )));
    }
    let m = total - n;
    let train = lambda_joint.view((0, 0), (n, n)).into_owned();
    let cross = lambda_joint.view((0, n), (n, m)).into_owned();
    let test = lambda_joint.view((n, n), (m, m)).into_owned();
    let factor = factorize(&train)?;

    // W = L⁻¹ Λ₁₂, u = L⁻¹ y  ⇒  μ* = Wᵀu, Λ* = Λ₂₂ − WᵀW
    let w = factor.solve_lower(&cross);
    let mut u = y.clone();
    factor.chol.l_dirty().solve_lower_triangular_unchecked_mut(&mut u);
    let mean = w.tr_mul(&u);
    let cov = test - w.tr_mul(&w);
    let covariance = (&cov + cov.transpose()) * 0.5;
    Ok(PredictiveMoments { mean, covariance })
}

/// Draws `μ* + L z` with `z` standard normal and `L Lᵀ = Λ*`.
pub fn sample_mvn<R: Rng + ?Sized>(moments: &PredictiveMoments, rng: &mut R) -> Result<DVector<f64>> {
    let m = moments.mean.len();
    if moments.covariance.nrows() != m || moments.covariance.ncols() != m {
        return Err(Error::Shape(format!(
            "mean has length {m} but covariance is {}x{}",
            moments.covariance.nrows(),
            moments.covariance.ncols()
        )));
    }
    if m == 0 || moments.covariance.iter().all(|v| *v == 0.0) {
        return Ok(moments.mean.clone());
    }
    let factor = factorize(&moments.covariance)?;
    Ok(draw_with(&moments.mean, &factor, rng))
}

pub(crate) fn draw_with<R: Rng + ?Sized>(
    mean: &DVector<f64>,
    factor: &SpdFactor,
    rng: &mut R,
) -> DVector<f64> {
    let z = DVector::from_iterator(mean.len(), (0..mean.len()).map(|_| rng.sample(StandardNormal)));
    mean + factor.chol.l_dirty().lower_triangle() * z
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn identity_factor() {
        let f = factorize(&DMatrix::identity(2, 2)).unwrap();
        assert_eq!(f.lower(), DMatrix::identity(2, 2));
        assert_eq!(f.jitter_applied(), 0.0);
    }

    #[test]
    fn hand_cholesky() {
        let a = DMatrix::from_row_slice(2, 2, &[4.0, 2.0, 2.0, 5.0]);
        let f = factorize(&a).unwrap();
        assert_eq!(f.lower(), DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 1.0, 2.0]));
    }

    #[test]
    fn singular_rank_one_gets_jitter() {
        let v = DVector::from_vec(vec![1.0, 2.0, -0.5, 3.0]);
        let a = &v * v.transpose();
        let f = factorize(&a).unwrap();
        let mean_diag = a.trace() / 4.0;
        assert!(f.jitter_applied() > 0.0);
        assert!(f.jitter_applied() <= 1e-6 * mean_diag);
        let l = f.lower();
        let recon = &l * l.transpose();
        let target = &a + DMatrix::identity(4, 4) * f.jitter_applied();
        let rel = (recon - &target).abs().max() / target.abs().max();
        assert!(rel < 1e-10, "{rel}");
    }

    #[test]
    fn indefinite_fails_with_eigenvalue() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        match factorize(&a) {
            Err(Error::NotPositiveDefinite { min_eigenvalue }) => {
                assert_abs_diff_eq!(min_eigenvalue, -1.0, epsilon = 1e-12)
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn loglik_hand_values() {
        let f = factorize(&DMatrix::identity(2, 2)).unwrap();
        let ll = gaussian_loglik(&DVector::zeros(2), &f).unwrap();
        assert_abs_diff_eq!(ll, -LN_2PI, epsilon = 1e-14);
        assert_abs_diff_eq!(ll, -1.83788, epsilon = 1e-5);

        let f = factorize(&DMatrix::from_element(1, 1, 1.0)).unwrap();
        let ll = gaussian_loglik(&DVector::from_element(1, 1.0), &f).unwrap();
        assert_abs_diff_eq!(ll, -1.41894, epsilon = 1e-5);
    }

    #[test]
    fn loglik_shape_error() {
        let f = factorize(&DMatrix::identity(2, 2)).unwrap();
        assert!(gaussian_loglik(&DVector::zeros(3), &f).is_err());
    }

    #[test]
    fn two_by_two_prediction() {
        let lam = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let p = predictive_moments(&lam, &DVector::from_element(1, 1.0)).unwrap();
        assert_abs_diff_eq!(p.mean[0], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(p.covariance[(0, 0)], 1.5, epsilon = 1e-15);
    }

    #[test]
    fn independent_blocks_give_prior() {
        let mut lam = DMatrix::zeros(5, 5);
        lam.view_mut((0, 0), (2, 2)).copy_from(&DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]));
        let test = DMatrix::from_row_slice(3, 3, &[1.0, 0.2, 0.1, 0.2, 3.0, 0.0, 0.1, 0.0, 2.0]);
        lam.view_mut((2, 2), (3, 3)).copy_from(&test);
        let p = predictive_moments(&lam, &DVector::from_vec(vec![4.0, -7.0])).unwrap();
        assert_eq!(p.mean, DVector::zeros(3));
        assert_eq!(p.covariance, test);
    }

    #[test]
    fn zero_covariance_returns_mean() {
        let moments = PredictiveMoments {
            mean: DVector::from_vec(vec![1.0, -2.0]),
            covariance: DMatrix::zeros(2, 2),
        };
        let mut rng = crate::stable::stream(3);
        assert_eq!(sample_mvn(&moments, &mut rng).unwrap(), moments.mean);
    }

    #[test]
    fn empty_test_block() {
        let lam = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let p = predictive_moments(&lam, &DVector::from_vec(vec![1.0, 0.0])).unwrap();
        assert_eq!(p.mean.len(), 0);
        let mut rng = crate::stable::stream(3);
        assert_eq!(sample_mvn(&p, &mut rng).unwrap().len(), 0);
    }

    #[test]
    fn standard_normal_draws() {
        let moments = PredictiveMoments {
            mean: DVector::zeros(1),
            covariance: DMatrix::identity(1, 1),
        };
        let mut rng = crate::stable::stream(11);
        let n = 100_000;
        let draws: Vec<f64> = (0..n).map(|_| sample_mvn(&moments, &mut rng).unwrap()[0]).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!(mean.abs() < 4.0 / (n as f64).sqrt(), "{mean}");
        assert!((var - 1.0).abs() < 0.05, "{var}");
    }

    #[test]
    fn correlated_draws_match_covariance() {
        let cov = DMatrix::from_row_slice(2, 2, &[2.0, 1.2, 1.2, 1.0]);
        let moments = PredictiveMoments { mean: DVector::from_vec(vec![1.0, -1.0]), covariance: cov.clone() };
        let mut rng = crate::stable::stream(12);
        let n = 100_000;
        let draws: Vec<DVector<f64>> = (0..n).map(|_| sample_mvn(&moments, &mut rng).unwrap()).collect();
        let mean = draws.iter().fold(DVector::zeros(2), |acc, d| acc + d) / n as f64;
        let mut emp = DMatrix::zeros(2, 2);
        for d in &draws {
            let c = d - &mean;
            emp += &c * c.transpose();
        }
        emp /= (n - 1) as f64;
        for (e, t) in emp.iter().zip(cov.iter()) {
            assert!((e - t).abs() < 0.05 * t.abs(), "{emp} vs {cov}");
        }
    }
}
