//! Independent reference implementations used by the integration tests.
//! Nothing here calls into the library's numerical code.
#![allow(dead_code, clippy::manual_clamp)]

use nalgebra::{DMatrix, DVector};
use statrs::function::erf::erfc;
use std::f64::consts::PI;

/// CDF of the positive stable law of index 1/2 with Laplace transform `exp(-√λ)`.
pub fn levy_cdf(s: f64) -> f64 {
    if s <= 0.0 {
        0.0
    } else {
        erfc(1.0 / (2.0 * s.sqrt()))
    }
}

/// CDF of `|C|` for a standard Cauchy `C`.
pub fn half_cauchy_cdf(s: f64) -> f64 {
    if s <= 0.0 {
        0.0
    } else {
        2.0 / PI * s.atan()
    }
}

/// Two-sided Kolmogorov–Smirnov statistic of a sample against a continuous CDF.
pub fn ks_statistic(sample: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut v = sample.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len() as f64;
    v.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// One entry of the next-layer kernel from the scalar formula.
pub fn next_entry(p_kk: f64, p_hh: f64, p_kh: f64, s: f64, delta: u32) -> f64 {
    let a = 1.0 + s * p_kk;
    let b = 1.0 + s * p_hh;
    let mut c = (1.0 + s * p_kh) / (a * b).sqrt();
    if c > 1.0 {
        c = 1.0;
    }
    if c < -1.0 {
        c = -1.0;
    }
    let t = c.acos();
    let j = if delta == 0 { PI - t } else { t.sin() + (PI - t) * t.cos() };
    (a * b).powf(delta as f64 / 2.0) * j / PI
}

pub fn next_layer(prev: &DMatrix<f64>, s: f64, delta: u32) -> DMatrix<f64> {
    let n = prev.nrows();
    DMatrix::from_fn(n, n, |k, h| next_entry(prev[(k, k)], prev[(h, h)], prev[(k, h)], s, delta))
}

/// Full stack from the scalar formulas: layers 1..=L and the output kernel.
pub fn stack(x: &DMatrix<f64>, first: &[f64], hidden: &[f64], delta: u32) -> (Vec<DMatrix<f64>>, DMatrix<f64>) {
    let n = x.nrows();
    let mut sigma = DMatrix::from_fn(n, n, |k, h| {
        (0..x.ncols()).map(|m| x[(k, m)] * first[m] * x[(h, m)]).sum::<f64>()
    });
    let mut layers = vec![sigma.clone()];
    for l in 2..=hidden.len() + 1 {
        let s = if l == 2 { 1.0 } else { hidden[l - 3] };
        sigma = next_layer(&sigma, s, delta);
        layers.push(sigma.clone());
    }
    let out = &sigma * *hidden.last().unwrap();
    (layers, out)
}

/// Gaussian log-density through an explicit inverse and determinant.
pub fn dense_loglik(y: &DVector<f64>, cov: &DMatrix<f64>) -> f64 {
    let inv = cov.clone().try_inverse().unwrap();
    let det = cov.determinant();
    -0.5 * ((y.transpose() * inv * y)[(0, 0)] + det.ln() + y.len() as f64 * (2.0 * PI).ln())
}

/// Conditional mean and covariance through an explicit inverse.
pub fn dense_predictive(lambda: &DMatrix<f64>, y: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = y.len();
    let m = lambda.nrows() - n;
    let a_inv = lambda.view((0, 0), (n, n)).into_owned().try_inverse().unwrap();
    let b = lambda.view((n, 0), (m, n)).into_owned();
    let c = lambda.view((n, n), (m, m)).into_owned();
    let mean = &b * &a_inv * y;
    let cov = c - &b * &a_inv * b.transpose();
    (mean, cov)
}

/// Random SPD matrix `A Aᵀ + 0.1 I`.
pub fn random_spd<R: rand::Rng>(n: usize, rng: &mut R) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    &a * a.transpose() + DMatrix::identity(n, n) * 0.1
}

pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Largest entrywise difference relative to `max(1, |b|)`.
pub fn max_rel_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs() / y.abs().max(1.0))
        .fold(0.0, f64::max)
}

/// The 10-d truth written out term by term.
pub fn truth10(x: &[f64]) -> f64 {
    let sgn = |v: f64| {
        if v == 0.0 {
            0.0
        } else {
            v.signum()
        }
    };
    let terms = [
        (6.0, x[0]),
        (8.0, x[1] + x[2]),
        (6.0, x[3] + x[4]),
        (6.0, x[5] + x[6]),
        (6.0, x[7] + x[8]),
        (6.0, x[9]),
    ];
    terms.iter().map(|(w, v)| w * sgn(*v)).sum()
}

/// Sample covariance of the rows of `draws`.
pub fn sample_cov(draws: &[DVector<f64>]) -> DMatrix<f64> {
    let n = draws.len() as f64;
    let d = draws[0].len();
    let mean = draws.iter().fold(DVector::zeros(d), |acc, v| acc + v) / n;
    draws
        .iter()
        .fold(DMatrix::zeros(d, d), |acc, v| acc + (v - &mean) * (v - &mean).transpose())
        / (n - 1.0)
}
