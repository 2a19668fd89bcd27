//! Synthetic jump-function benchmarks, error metrics and replicate runs.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore};
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::analysis::{coverage, summarize_predictive};
use crate::config::ModelConfig;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::mcmc::run_chain;
use crate::stable::{stream, substream};

/// Environment variable bounding the replicate worker pool.
pub const WORKERS_ENV: &str = "ALPHA_KERNEL_WORKERS";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    /// `f(ξ) = 5·1{ξ > 0}` on 40 grid points, 100 test points.
    Jump1d,
    /// `f(ξ) = 5·1{ξ₁ > 0} + 5·1{ξ₂ > 0}` on a 7 × 7 grid, 9 × 9 test grid.
    Jump2d,
    /// Sign sums over ten uniform inputs on `(-0.5, 0.5)`.
    Jump10d,
}

impl Scenario {
    pub fn input_dim(self) -> usize {
        match self {
            Scenario::Jump1d => 1,
            Scenario::Jump2d => 2,
            Scenario::Jump10d => 10,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Jump1d => "jump1d",
            Scenario::Jump2d => "jump2d",
            Scenario::Jump10d => "jump10d",
        }
    }
}

impl std::str::FromStr for Scenario {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "jump1d" => Ok(Scenario::Jump1d),
            "jump2d" => Ok(Scenario::Jump2d),
            "jump10d" => Ok(Scenario::Jump10d),
            other => Err(Error::Usage(format!(
                "unknown scenario {other:?} (expected jump1d, jump2d or jump10d)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub scenario: Scenario,
    pub noise_sd: f64,
    pub seed: u64,
    /// Use `5·1{ξ₁ > 0} + 5·1{ξ₁ > 0}` for the 2-d truth instead of the
    /// two-coordinate version.
    pub literal_2d_truth: bool,
    /// Training size of the 10-d design.
    pub n_train: usize,
    /// Test size of the 10-d design.
    pub n_test: usize,
}

impl SyntheticSpec {
    pub fn new(scenario: Scenario, seed: u64) -> Self {
        Self { scenario, noise_sd: 0.5, seed, literal_2d_truth: false, n_train: 300, n_test: 300 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return Err(Error::Config(format!("noise sd must be non-negative, got {}", self.noise_sd)));
        }
        if self.scenario == Scenario::Jump10d && (self.n_train < 2 || self.n_test == 0) {
            return Err(Error::Config("10-d design needs n_train >= 2 and n_test >= 1".into()));
        }
        Ok(())
    }

    /// Noise-free response at one input.
    pub fn truth(&self, xi: &[f64]) -> f64 {
        let step = |v: f64| if v > 0.0 { 5.0 } else { 0.0 };
        match self.scenario {
            Scenario::Jump1d => step(xi[0]),
            Scenario::Jump2d if self.literal_2d_truth => step(xi[0]) + step(xi[0]),
            Scenario::Jump2d => step(xi[0]) + step(xi[1]),
            Scenario::Jump10d => jump10d_truth(xi),
        }
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn jump10d_truth(xi: &[f64]) -> f64 {
    6.0 * sign(xi[0])
        + 8.0 * sign(xi[1] + xi[2])
        + 6.0 * sign(xi[3] + xi[4])
        + 6.0 * sign(xi[5] + xi[6])
        + 6.0 * sign(xi[7] + xi[8])
        + 6.0 * sign(xi[9])
}

/// A generated benchmark: noisy training data plus noisy and noise-free
/// test responses.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticData {
    /// Training data with the test inputs attached.
    pub dataset: Dataset,
    pub y_test: DVector<f64>,
    pub truth_train: DVector<f64>,
    pub truth_test: DVector<f64>,
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

fn grid2(axis: &[f64]) -> DMatrix<f64> {
    let k = axis.len();
    DMatrix::from_fn(k * k, 2, |r, c| if c == 0 { axis[r / k] } else { axis[r % k] })
}

/// Generates the data of `spec`. Pure in the spec.
pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let mut rng = stream(spec.seed);
    let (x, x_test) = match spec.scenario {
        Scenario::Jump1d => {
            let train = linspace(-1.0, 1.0, 40);
            let test: Vec<f64> = (0..100).map(|k| -1.0 + (2 * k + 1) as f64 / 100.0).collect();
            (DMatrix::from_vec(40, 1, train), DMatrix::from_vec(100, 1, test))
        }
        Scenario::Jump2d => (grid2(&linspace(-1.0, 1.0, 7)), grid2(&linspace(-1.0, 1.0, 9))),
        Scenario::Jump10d => {
            let u = Uniform::new(-0.5, 0.5).expect("valid bounds");
            let train = DMatrix::from_fn(spec.n_train, 10, |_, _| u.sample(&mut rng));
            let test = DMatrix::from_fn(spec.n_test, 10, |_, _| u.sample(&mut rng));
            (train, test)
        }
    };
    let truth = |m: &DMatrix<f64>| {
        DVector::from_iterator(
            m.nrows(),
            m.row_iter().map(|r| spec.truth(&r.iter().copied().collect::<Vec<_>>())),
        )
    };
    let truth_train = truth(&x);
    let truth_test = truth(&x_test);
    let noise = Normal::new(0.0, spec.noise_sd.max(f64::MIN_POSITIVE)).expect("valid sd");
    let mut noisy = |f: &DVector<f64>| {
        if spec.noise_sd == 0.0 {
            f.clone()
        } else {
            f.map(|v| v + noise.sample(&mut rng))
        }
    };
    let y = noisy(&truth_train);
    let y_test = noisy(&truth_test);
    let dataset = Dataset::new(x, y)?.with_test(x_test)?;
    Ok(SyntheticData { dataset, y_test, truth_train, truth_test })
}

fn check_lengths(y_hat: &[f64], y: &[f64]) -> Result<()> {
    if y_hat.len() != y.len() || y.is_empty() {
        return Err(Error::Shape(format!(
            "metric inputs must have equal positive length, got {} and {}",
            y_hat.len(),
            y.len()
        )));
    }
    Ok(())
}

pub fn rmse(y_hat: &[f64], y: &[f64]) -> Result<f64> {
    check_lengths(y_hat, y)?;
    let ss: f64 = y_hat.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum();
    Ok((ss / y.len() as f64).sqrt())
}

pub fn mae(y_hat: &[f64], y: &[f64]) -> Result<f64> {
    check_lengths(y_hat, y)?;
    let s: f64 = y_hat.iter().zip(y).map(|(a, b)| (a - b).abs()).sum();
    Ok(s / y.len() as f64)
}

/// Metrics of one method on one replicate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub scenario: String,
    pub method: String,
    pub replicate: usize,
    pub rmse: f64,
    pub mae: f64,
    pub coverage: f64,
    pub seconds: f64,
    /// Set when the replicate failed; metrics are then NaN.
    pub error: Option<String>,
}

/// Mean and sample standard deviation of one metric over successful rows.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MeanSd {
    pub mean: f64,
    pub sd: f64,
}

impl MeanSd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let sd = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Self { mean, sd }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Aggregate {
    pub scenario: String,
    pub method: String,
    pub replicates: usize,
    pub failures: usize,
    pub rmse: MeanSd,
    pub mae: MeanSd,
    pub coverage: MeanSd,
    pub seconds: MeanSd,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricReport {
    pub rows: Vec<MetricRow>,
}

impl MetricReport {
    /// Aggregates over the successful rows of each (scenario, method) group.
    pub fn aggregate(&self) -> Vec<Aggregate> {
        let mut keys: Vec<(String, String)> = Vec::new();
        for r in &self.rows {
            let k = (r.scenario.clone(), r.method.clone());
            if !keys.contains(&k) {
                keys.push(k);
            }
        }
        keys.into_iter()
            .map(|(scenario, method)| {
                let group: Vec<&MetricRow> =
                    self.rows.iter().filter(|r| r.scenario == scenario && r.method == method).collect();
                let ok: Vec<&&MetricRow> = group.iter().filter(|r| r.error.is_none()).collect();
                let col = |f: fn(&MetricRow) -> f64| MeanSd::of(&ok.iter().map(|r| f(r)).collect::<Vec<_>>());
                Aggregate {
                    scenario,
                    method,
                    replicates: ok.len(),
                    failures: group.len() - ok.len(),
                    rmse: col(|r| r.rmse),
                    mae: col(|r| r.mae),
                    coverage: col(|r| r.coverage),
                    seconds: col(|r| r.seconds),
                }
            })
            .collect()
    }

    pub fn extend(&mut self, other: MetricReport) {
        self.rows.extend(other.rows);
    }
}

/// Deterministic per-replicate seed derived from a master seed.
pub fn replicate_seed(master: u64, replicate: usize) -> u64 {
    substream(master, 1 << 32 | replicate as u64).next_u64()
}

/// Method label used in reports.
pub fn method_label(config: &ModelConfig) -> String {
    format!("alpha={}, delta={}, L={}", config.alpha, config.delta.exponent(), config.layers)
}

/// Fits one generated dataset and scores the point prediction and 90%
/// intervals against the noisy test responses.
pub fn evaluate(
    data: &SyntheticData,
    config: &ModelConfig,
    scenario: &str,
    method: &str,
    replicate: usize,
) -> MetricRow {
    let start = Instant::now();
    let scored = (|| {
        let trace = run_chain(&data.dataset, config)?;
        let summary = summarize_predictive(&trace.predictive_draws)?;
        let y = data.y_test.as_slice();
        let point = summary.point(config.point_estimate);
        Ok::<_, Error>((rmse(point, y)?, mae(point, y)?, coverage(&summary, y)?))
    })();
    let seconds = start.elapsed().as_secs_f64();
    let (rmse, mae, coverage, error) = match scored {
        Ok((r, m, c)) => (r, m, c, None),
        Err(e) => (f64::NAN, f64::NAN, f64::NAN, Some(e.to_string())),
    };
    MetricRow {
        scenario: scenario.to_string(),
        method: method.to_string(),
        replicate,
        rmse,
        mae,
        coverage,
        seconds,
        error,
    }
}

/// Worker pool bounded by [`WORKERS_ENV`] (default: available cores).
pub fn worker_pool() -> Result<rayon::ThreadPool> {
    let threads = match std::env::var(WORKERS_ENV) {
        Ok(v) => v
            .parse::<usize>()
            .ok()
            .filter(|n| *n > 0)
            .ok_or_else(|| Error::Config(format!("{WORKERS_ENV} must be a positive integer, got {v:?}")))?,
        Err(_) => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("cannot build worker pool: {e}")))
}

/// Runs `n_replicates` independent replicates, each with fresh data and
/// chain seeds derived from `spec.seed` and `config.seed`.
pub fn run_replicates(spec: &SyntheticSpec, config: &ModelConfig, n_replicates: usize) -> Result<MetricReport> {
    run_labeled(spec, config, n_replicates, &method_label(config))
}

fn run_labeled(
    spec: &SyntheticSpec,
    config: &ModelConfig,
    n_replicates: usize,
    method: &str,
) -> Result<MetricReport> {
    if n_replicates == 0 {
        return Err(Error::Config("need at least one replicate".into()));
    }
    spec.validate()?;
    config.validate()?;
    let pool = worker_pool()?;
    let rows = pool.install(|| {
        use rayon::prelude::*;
        (0..n_replicates)
            .into_par_iter()
            .map(|r| {
                let data_spec = SyntheticSpec { seed: replicate_seed(spec.seed, r), ..spec.clone() };
                let chain_config = ModelConfig { seed: replicate_seed(config.seed, r), ..config.clone() };
                match generate(&data_spec) {
                    Ok(data) => evaluate(&data, &chain_config, spec.scenario.name(), method, r),
                    Err(e) => MetricRow {
                        scenario: spec.scenario.name().into(),
                        method: method.into(),
                        replicate: r,
                        rmse: f64::NAN,
                        mae: f64::NAN,
                        coverage: f64::NAN,
                        seconds: 0.0,
                        error: Some(e.to_string()),
                    },
                }
            })
            .collect::<Vec<_>>()
    });
    for row in rows.iter().filter(|r| r.error.is_some()) {
        log::warn!("replicate {} failed: {}", row.replicate, row.error.as_deref().unwrap_or(""));
    }
    Ok(MetricReport { rows })
}

/// The same pipeline with every scale pinned at 1 (`α = 2`); `σ²` is still sampled.
pub fn baseline_alpha2(spec: &SyntheticSpec, config: &ModelConfig, n_replicates: usize) -> Result<MetricReport> {
    let config = ModelConfig { alpha: 2.0, ..config.clone() };
    run_labeled(spec, &config, n_replicates, &format!("gaussian limit, {}", method_label(&config)))
}

/// Draws `n` inputs uniformly on `[lo, hi]^dim`; handy for custom designs.
pub fn uniform_design<R: Rng>(n: usize, dim: usize, lo: f64, hi: f64, rng: &mut R) -> DMatrix<f64> {
    let u = Uniform::new_inclusive(lo, hi).expect("valid bounds");
    DMatrix::from_fn(n, dim, |_, _| u.sample(rng))
}
