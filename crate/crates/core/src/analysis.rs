//! Post-processing of chain output: predictive summaries, kernel quantiles,
//! feature draws and conditional mutual information.
//!
//! Quantiles use linear interpolation between order statistics: for sorted
//! values `x₀ ≤ … ≤ x_{n-1}` and level `p`, `h = (n-1)p` and
//! `q = x_⌊h⌋ + (h - ⌊h⌋)(x_⌊h⌋+1 - x_⌊h⌋)`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;

use crate::config::{ModelConfig, PointEstimate};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::gaussian::{draw_with, factorize};
use crate::kernel::{first_layer_kernel, next_layer_kernel, KernelStack, ScaleState};
use crate::mcmc::ChainTrace;
use crate::stable::stream;

/// Ceiling on `|ρ|` before `log(1 - ρ²)`.
pub const RHO_CEILING: f64 = 1.0 - 1e-12;

/// Quantile of already sorted values.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty slice");
    assert!((0.0..=1.0).contains(&p), "quantile level {p} outside [0, 1]");
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Quantile of unsorted values (NaN entries are ignored).
pub fn quantile(values: &[f64], p: f64) -> f64 {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| !x.is_nan()).collect();
    v.sort_by(f64::total_cmp);
    quantile_sorted(&v, p)
}

/// Mean and sample sd, shifted by the first value so constant input gives
/// exactly that constant and 0.
fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let shift = values[0];
    let mean = shift + values.iter().map(|v| v - shift).sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Excess kurtosis `m₄ / m₂² - 3` with population moments.
pub fn excess_kurtosis(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let (m2, m4) = values.iter().fold((0.0, 0.0), |(a, b), v| {
        let d2 = (v - mean).powi(2);
        (a + d2, b + d2 * d2)
    });
    let (m2, m4) = (m2 / n, m4 / n);
    m4 / (m2 * m2) - 3.0
}

/// Per-point summaries of predictive draws.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictiveSummary {
    pub mean: Vec<f64>,
    pub median: Vec<f64>,
    pub q05: Vec<f64>,
    pub q95: Vec<f64>,
    pub sd: Vec<f64>,
}

impl PredictiveSummary {
    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    pub fn point(&self, estimate: PointEstimate) -> &[f64] {
        match estimate {
            PointEstimate::Mean => &self.mean,
            PointEstimate::Median => &self.median,
        }
    }
}

/// Summarizes an iterations × points set of draws. Non-finite entries
/// (failed draws) are skipped per column.
pub fn summarize_predictive(draws: &[Vec<f64>]) -> Result<PredictiveSummary> {
    if draws.len() < 2 {
        return Err(Error::Usage(format!(
            "predictive summary needs at least 2 kept iterations, got {}",
            draws.len()
        )));
    }
    let m = draws[0].len();
    if draws.iter().any(|d| d.len() != m) {
        return Err(Error::Shape("predictive draws have unequal lengths".into()));
    }
    let columns: Vec<_> = (0..m)
        .into_par_iter()
        .map(|j| {
            let mut col: Vec<f64> = draws.iter().map(|d| d[j]).filter(|v| v.is_finite()).collect();
            if col.len() < 2 {
                return [f64::NAN; 5];
            }
            col.sort_by(f64::total_cmp);
            let (mean, sd) = mean_sd(&col);
            [
                mean,
                quantile_sorted(&col, 0.5),
                quantile_sorted(&col, 0.05),
                quantile_sorted(&col, 0.95),
                sd,
            ]
        })
        .collect();
    let pick = |k: usize| columns.iter().map(|c| c[k]).collect();
    Ok(PredictiveSummary { mean: pick(0), median: pick(1), q05: pick(2), q95: pick(3), sd: pick(4) })
}

/// Fraction of `y_true` inside `[q05, q95]`.
pub fn coverage(summary: &PredictiveSummary, y_true: &[f64]) -> Result<f64> {
    if summary.len() != y_true.len() {
        return Err(Error::Shape(format!(
            "{} summaries but {} observations",
            summary.len(),
            y_true.len()
        )));
    }
    if y_true.is_empty() {
        return Ok(0.0);
    }
    let inside = y_true
        .iter()
        .enumerate()
        .filter(|&(i, &y)| summary.q05[i] <= y && y <= summary.q95[i])
        .count();
    Ok(inside as f64 / y_true.len() as f64)
}

/// Entrywise quantiles of a set of equally sized matrices, one matrix per level.
pub fn kernel_quantiles(draws: &[DMatrix<f64>], probs: &[f64]) -> Result<Vec<DMatrix<f64>>> {
    if draws.len() < 2 {
        return Err(Error::Usage(format!(
            "kernel quantiles need at least 2 draws, got {}",
            draws.len()
        )));
    }
    if let Some(p) = probs.iter().find(|p| !(**p > 0.0 && **p < 1.0)) {
        return Err(Error::Usage(format!("quantile level {p} outside (0, 1)")));
    }
    let (r, c) = draws[0].shape();
    if draws.iter().any(|d| d.shape() != (r, c)) {
        return Err(Error::Shape("kernel draws have unequal shapes".into()));
    }
    let entries: Vec<Vec<f64>> = (0..r * c)
        .into_par_iter()
        .map(|k| {
            let mut v: Vec<f64> = draws.iter().map(|d| d[k]).collect();
            v.sort_by(f64::total_cmp);
            probs.iter().map(|&p| quantile_sorted(&v, p)).collect()
        })
        .collect();
    Ok((0..probs.len())
        .map(|q| DMatrix::from_fn(r, c, |i, j| entries[i + j * r][q]))
        .collect())
}

/// One feature vector `z⁽ˡ⁾_j` over all input points.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureRow {
    pub iteration: usize,
    pub unit: usize,
    pub values: Vec<f64>,
}

/// Posterior feature draws at one layer.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureDraws {
    pub layer: usize,
    pub rows: Vec<FeatureRow>,
}

impl FeatureDraws {
    pub fn points(&self) -> usize {
        self.rows.first().map_or(0, |r| r.values.len())
    }

    /// All draws at one input point, pooled over iterations and units.
    pub fn at_point(&self, point: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r.values[point]).collect()
    }

    /// Excess kurtosis at each point of the pooled draws there.
    pub fn point_kurtosis(&self) -> Vec<f64> {
        (0..self.points()).map(|i| excess_kurtosis(&self.at_point(i))).collect()
    }

    /// Mean over points of [`FeatureDraws::point_kurtosis`].
    pub fn mean_kurtosis(&self) -> f64 {
        let k = self.point_kurtosis();
        k.iter().sum::<f64>() / k.len() as f64
    }
}

/// Draws `units` independent features `z ~ N(0, s⁽ˡ⁾ Σ⁽ˡ⁾)` at the training
/// inputs for every kept state (no extra scale at layer 1).
pub fn sample_features<R: Rng>(
    trace: &ChainTrace,
    data: &Dataset,
    config: &ModelConfig,
    layer: usize,
    units: usize,
    rng: &mut R,
) -> Result<FeatureDraws> {
    if !(1..=config.layers).contains(&layer) {
        return Err(Error::Usage(format!(
            "layer must lie in 1..={}, got {layer}",
            config.layers
        )));
    }
    if trace.is_empty() {
        return Err(Error::Usage("trace has no kept states".into()));
    }
    let zero = DVector::zeros(data.n());
    let mut rows = Vec::with_capacity(trace.len() * units);
    for row in &trace.rows {
        let stack = KernelStack::build(&data.x, &row.scales, config)?;
        let cov = stack.layer(layer) * row.scales.feature_scale(layer);
        let factor = factorize(&cov)?;
        for unit in 0..units {
            let z = draw_with(&zero, &factor, rng);
            rows.push(FeatureRow { iteration: row.iteration, unit, values: z.as_slice().to_vec() });
        }
    }
    Ok(FeatureDraws { layer, rows })
}

/// Monte Carlo estimate of the conditional mutual information of one pair.
#[derive(Clone, Debug, PartialEq)]
pub struct MiEstimate {
    pub x1: Vec<f64>,
    pub x2: Vec<f64>,
    /// Euclidean distance between the inputs.
    pub distance: f64,
    pub mi: f64,
    pub std_error: f64,
    /// Some draw hit the `|ρ|` ceiling.
    pub flagged: bool,
}

/// Source of scale sets for [`conditional_mutual_information`].
#[derive(Clone, Copy, Debug)]
pub enum MiScales<'a> {
    /// Fresh draws from the prior, seeded by the configuration.
    Prior,
    /// Kept states of a chain, cycled. Exploratory use only.
    Posterior(&'a ChainTrace),
}

/// `E_S[-½ log(1 - ρ²(S))]` for each input pair, where `ρ` is the
/// correlation of the 2 × 2 output kernel. All pairs share the same scale
/// draws, so the estimate is symmetric in the two inputs.
pub fn conditional_mutual_information(
    config: &ModelConfig,
    pairs: &[(Vec<f64>, Vec<f64>)],
    mc_samples: usize,
    scales: MiScales<'_>,
) -> Result<Vec<MiEstimate>> {
    config.validate()?;
    if mc_samples < 1000 {
        return Err(Error::Config(format!(
            "mutual information needs at least 1000 Monte Carlo samples, got {mc_samples}"
        )));
    }
    let dim = match pairs.first() {
        Some((a, _)) => a.len(),
        None => return Ok(Vec::new()),
    };
    if dim == 0 || pairs.iter().any(|(a, b)| a.len() != dim || b.len() != dim) {
        return Err(Error::Shape("input pairs must share one positive dimension".into()));
    }
    let draws: Vec<ScaleState> = match scales {
        MiScales::Prior => {
            let prior = config.scale_prior()?;
            let mut rng = stream(config.seed);
            (0..mc_samples).map(|_| prior.draw_state(dim, config.layers, &mut rng)).collect()
        }
        MiScales::Posterior(trace) => {
            if trace.is_empty() {
                return Err(Error::Usage("trace has no kept states".into()));
            }
            if trace.rows[0].scales.first_layer.len() != dim {
                return Err(Error::Shape("trace scales do not match the input dimension".into()));
            }
            (0..mc_samples).map(|i| trace.rows[i % trace.len()].scales.clone()).collect()
        }
    };
    pairs
        .par_iter()
        .map(|(a, b)| {
            let x = DMatrix::from_fn(2, dim, |i, j| if i == 0 { a[j] } else { b[j] });
            let mut values = Vec::with_capacity(draws.len());
            let mut flagged = false;
            for s in &draws {
                let k = pair_kernel(&x, s, config)?;
                let rho = k[(0, 1)] / (k[(0, 0)] * k[(1, 1)]).sqrt();
                let rho = if rho.is_nan() { 1.0 } else { rho.abs() };
                if rho >= RHO_CEILING {
                    flagged = true;
                }
                values.push(-0.5 * (-rho.min(RHO_CEILING).powi(2)).ln_1p());
            }
            let n = values.len() as f64;
            let (mi, sd) = mean_sd(&values);
            let distance = a.iter().zip(b).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
            Ok(MiEstimate {
                x1: a.clone(),
                x2: b.clone(),
                distance,
                mi,
                std_error: sd / n.sqrt(),
                flagged,
            })
        })
        .collect()
}

fn pair_kernel(x: &DMatrix<f64>, s: &ScaleState, config: &ModelConfig) -> Result<DMatrix<f64>> {
    let mut k = first_layer_kernel(x, &s.first_layer)?;
    for layer in 2..=config.layers {
        let scale = if layer == 2 { 1.0 } else { s.hidden[layer - 3] };
        k = next_layer_kernel(&k, scale, config.delta)?;
    }
    Ok(k * s.output_scale())
}

/// Pairs `(anchor, anchor + d)` on the real line.
pub fn pairs_1d(anchor: f64, distances: &[f64]) -> Vec<(Vec<f64>, Vec<f64>)> {
    distances.iter().map(|d| (vec![anchor], vec![anchor + d])).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_draws() {
        let draws = vec![vec![2.5, -1.0]; 7];
        let s = summarize_predictive(&draws).unwrap();
        assert_eq!(s.mean, vec![2.5, -1.0]);
        assert_eq!(s.median, vec![2.5, -1.0]);
        assert_eq!(s.q05, vec![2.5, -1.0]);
        assert_eq!(s.q95, vec![2.5, -1.0]);
        assert_eq!(s.sd, vec![0.0, 0.0]);
    }

    #[test]
    fn integer_grid_quantiles() {
        let draws: Vec<Vec<f64>> = (0..=100).map(|i| vec![i as f64]).collect();
        let s = summarize_predictive(&draws).unwrap();
        assert_eq!(s.q05, vec![5.0]);
        assert_eq!(s.q95, vec![95.0]);
        assert_eq!(s.median, vec![50.0]);
    }

    #[test]
    fn too_few_draws() {
        assert!(matches!(summarize_predictive(&[]), Err(Error::Usage(_))));
        assert!(matches!(summarize_predictive(&[vec![1.0]]), Err(Error::Usage(_))));
    }

    #[test]
    fn coverage_extremes() {
        let s = PredictiveSummary {
            mean: vec![0.0; 3],
            median: vec![0.0; 3],
            q05: vec![-1.0; 3],
            q95: vec![1.0; 3],
            sd: vec![1.0; 3],
        };
        assert_eq!(coverage(&s, &[0.0, 0.5, -1.0]).unwrap(), 1.0);
        assert_eq!(coverage(&s, &[2.0, -3.0, 1.5]).unwrap(), 0.0);
        assert!(coverage(&s, &[0.0]).is_err());
    }

    #[test]
    fn midpoint_median_of_two() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let b = DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 3.0, 10.0]);
        let q = kernel_quantiles(&[a, b], &[0.5]).unwrap();
        assert_eq!(q[0], DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 3.0, 7.0]));
    }

    #[test]
    fn kurtosis_of_known_sets() {
        // Two-point symmetric law has excess kurtosis -2.
        let v = [1.0, -1.0, 1.0, -1.0];
        assert!((excess_kurtosis(&v) + 2.0).abs() < 1e-12);
    }

    #[test]
    fn identical_inputs_hit_ceiling() {
        let config = ModelConfig::default();
        let pairs = vec![(vec![0.3], vec![0.3])];
        let est = conditional_mutual_information(&config, &pairs, 1000, MiScales::Prior).unwrap();
        assert!(est[0].flagged);
        let ceiling = -0.5 * (-RHO_CEILING * RHO_CEILING).ln_1p();
        assert!((est[0].mi - ceiling).abs() < 1e-9 * ceiling);
    }

    #[test]
    fn gaussian_limit_has_no_mc_error() {
        let config = ModelConfig { alpha: 2.0, ..Default::default() };
        let est =
            conditional_mutual_information(&config, &pairs_1d(-1.0, &[0.5]), 1000, MiScales::Prior)
                .unwrap();
        assert_eq!(est[0].std_error, 0.0);
        assert!(est[0].mi > 0.0);
    }

    #[test]
    fn mi_sample_count_validated() {
        let config = ModelConfig::default();
        assert!(conditional_mutual_information(&config, &pairs_1d(0.0, &[1.0]), 999, MiScales::Prior)
            .is_err());
    }
}
