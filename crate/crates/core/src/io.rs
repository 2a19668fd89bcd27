//! File formats: CSV outputs, traces, run manifests and config files.
//!
//! Numbers are written with Rust's shortest round-trip formatting, so
//! re-reading a file gives back the exact values and identical runs give
//! identical bytes.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::{FeatureDraws, MiEstimate, PredictiveSummary};
use crate::config::ModelConfig;
use crate::data::Standardizer;
use crate::error::{Error, Result};
use crate::experiments::{Aggregate, MetricRow};
use crate::kernel::ScaleState;
use crate::mcmc::{ChainTrace, TraceRow};
use crate::stable::LaplaceCheck;

fn create(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::WriterBuilder::new().from_writer(BufWriter::new(file)))
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| Error::Data(format!("{}: {e}", path.display()))
}

fn num(v: f64) -> String {
    format!("{v}")
}

/// Writes a header and rows of already formatted cells.
pub fn write_rows<I, R>(path: &Path, header: &[String], rows: I) -> Result<()>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut w = create(path)?;
    w.write_record(header).map_err(csv_err(path))?;
    for row in rows {
        w.write_record(row).map_err(csv_err(path))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn header<S: AsRef<str>>(cols: &[S]) -> Vec<String> {
    cols.iter().map(|s| s.as_ref().to_string()).collect()
}

/// Trace columns: `iter, loglik, sigma2, s1_1 … s1_I, s2 … sL`.
pub fn trace_header(input_dim: usize, layers: usize) -> Vec<String> {
    let mut h = header(&["iter", "loglik", "sigma2"]);
    h.extend((1..=input_dim).map(|i| format!("s1_{i}")));
    h.extend((2..=layers).map(|l| format!("s{l}")));
    h
}

pub fn write_trace(path: &Path, rows: &[TraceRow]) -> Result<()> {
    let (dim, layers) = rows
        .first()
        .map_or((0, 0), |r| (r.scales.first_layer.len(), r.scales.depth()));
    write_rows(
        path,
        &trace_header(dim, layers),
        rows.iter().map(|r| {
            [r.iteration.to_string(), num(r.loglik), num(r.sigma2)]
                .into_iter()
                .chain(r.scales.flatten().into_iter().map(num))
                .collect::<Vec<_>>()
        }),
    )
}

/// Reads a trace written by [`write_trace`].
pub fn read_trace(path: &Path) -> Result<ChainTrace> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::Reader::from_reader(file);
    let cols: Vec<String> = reader.headers().map_err(csv_err(path))?.iter().map(String::from).collect();
    if cols.len() < 4 || cols[..3] != ["iter", "loglik", "sigma2"] {
        return Err(Error::Data(format!("{}: not a trace file", path.display())));
    }
    let dim = cols.iter().filter(|c| c.starts_with("s1_")).count();
    let layers = cols.len() - 3 - dim + 1;
    if dim == 0 || cols != trace_header(dim, layers) {
        return Err(Error::Data(format!("{}: unexpected trace columns {cols:?}", path.display())));
    }
    let mut trace = ChainTrace::default();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(csv_err(path))?;
        let bad = |c: &str| Error::Data(format!("{}: line {line}: bad value {c:?}", path.display()));
        let iteration: usize = record[0].parse().map_err(|_| bad(&record[0]))?;
        let v: Vec<f64> = record
            .iter()
            .skip(1)
            .map(|c| c.parse::<f64>().map_err(|_| bad(c)))
            .collect::<Result<_>>()?;
        trace.rows.push(TraceRow {
            iteration,
            loglik: v[0],
            sigma2: v[1],
            scales: ScaleState { first_layer: v[2..2 + dim].to_vec(), hidden: v[2 + dim..].to_vec() },
        });
    }
    Ok(trace)
}

/// One row per kept iteration, one column `p<k>` per prediction point.
pub fn write_predictive_draws(path: &Path, draws: &[Vec<f64>]) -> Result<()> {
    let m = draws.first().map_or(0, Vec::len);
    write_rows(
        path,
        &(0..m).map(|k| format!("p{k}")).collect::<Vec<_>>(),
        draws.iter().map(|d| d.iter().copied().map(num).collect::<Vec<_>>()),
    )
}

/// `point_id, mean, median, q05, q95, sd`, plus `prediction` when given.
pub fn write_summary(path: &Path, summary: &PredictiveSummary, prediction: Option<&[f64]>) -> Result<()> {
    let mut h = header(&["point_id", "mean", "median", "q05", "q95", "sd"]);
    if prediction.is_some() {
        h.push("prediction".into());
    }
    write_rows(
        path,
        &h,
        (0..summary.len()).map(|i| {
            let mut row = vec![
                i.to_string(),
                num(summary.mean[i]),
                num(summary.median[i]),
                num(summary.q05[i]),
                num(summary.q95[i]),
                num(summary.sd[i]),
            ];
            if let Some(p) = prediction {
                row.push(num(p[i]));
            }
            row
        }),
    )
}

fn coords(x: &[f64]) -> String {
    x.iter().map(|v| num(*v)).collect::<Vec<_>>().join(" ")
}

/// `x1, x2, distance, mi, flag, alpha, std_error`. Multi-dimensional inputs
/// are written as space-separated coordinates.
pub fn write_mi(path: &Path, rows: &[(f64, MiEstimate)]) -> Result<()> {
    write_rows(
        path,
        &header(&["x1", "x2", "distance", "mi", "flag", "alpha", "std_error"]),
        rows.iter().map(|(alpha, e)| {
            vec![
                coords(&e.x1),
                coords(&e.x2),
                num(e.distance),
                num(e.mi),
                u8::from(e.flagged).to_string(),
                num(*alpha),
                num(e.std_error),
            ]
        }),
    )
}

/// `layer, iteration, unit, z0 … z{n-1}`.
pub fn write_features(path: &Path, draws: &FeatureDraws) -> Result<()> {
    let mut h = header(&["layer", "iteration", "unit"]);
    h.extend((0..draws.points()).map(|i| format!("z{i}")));
    write_rows(
        path,
        &h,
        draws.rows.iter().map(|r| {
            [draws.layer.to_string(), r.iteration.to_string(), r.unit.to_string()]
                .into_iter()
                .chain(r.values.iter().copied().map(num))
                .collect::<Vec<_>>()
        }),
    )
}

pub fn write_metrics(path: &Path, rows: &[MetricRow]) -> Result<()> {
    write_rows(
        path,
        &header(&["scenario", "method", "replicate", "rmse", "mae", "coverage", "seconds", "error"]),
        rows.iter().map(|r| {
            vec![
                r.scenario.clone(),
                r.method.clone(),
                r.replicate.to_string(),
                num(r.rmse),
                num(r.mae),
                num(r.coverage),
                num(r.seconds),
                r.error.clone().unwrap_or_default(),
            ]
        }),
    )
}

pub fn write_aggregate(path: &Path, rows: &[Aggregate]) -> Result<()> {
    write_rows(
        path,
        &header(&[
            "scenario",
            "method",
            "replicates",
            "failures",
            "rmse_mean",
            "rmse_sd",
            "mae_mean",
            "mae_sd",
            "coverage_mean",
            "coverage_sd",
            "seconds_mean",
            "seconds_sd",
        ]),
        rows.iter().map(|a| {
            vec![
                a.scenario.clone(),
                a.method.clone(),
                a.replicates.to_string(),
                a.failures.to_string(),
                num(a.rmse.mean),
                num(a.rmse.sd),
                num(a.mae.mean),
                num(a.mae.sd),
                num(a.coverage.mean),
                num(a.coverage.sd),
                num(a.seconds.mean),
                num(a.seconds.sd),
            ]
        }),
    )
}

pub fn write_laplace(path: &Path, alpha0: f64, rows: &[LaplaceCheck]) -> Result<()> {
    write_rows(
        path,
        &header(&["alpha0", "lambda", "empirical", "target", "std_error", "flagged"]),
        rows.iter().map(|r| {
            vec![
                num(alpha0),
                num(r.lambda),
                num(r.empirical),
                num(r.target),
                num(r.std_error),
                u8::from(r.flagged).to_string(),
            ]
        }),
    )
}

/// Headerless matrix, one CSV row per matrix row.
pub fn write_matrix(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let mut w = create(path)?;
    for row in m.row_iter() {
        w.write_record(row.iter().map(|v| num(*v))).map_err(csv_err(path))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Inputs and responses as used by the model, with named columns.
pub fn write_inputs(path: &Path, columns: &[String], x: &DMatrix<f64>, y: &[f64]) -> Result<()> {
    let mut h = columns.to_vec();
    h.push("y".into());
    write_rows(
        path,
        &h,
        (0..x.nrows()).map(|i| x.row(i).iter().copied().chain([y[i]]).map(num).collect::<Vec<_>>()),
    )
}

/// Hex SHA-256 of a file's contents.
pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

pub fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

/// Everything needed to reproduce the outputs of one CLI run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    /// Flattened; its `seed` is the master seed of the run.
    #[serde(flatten)]
    pub config: ModelConfig,
    /// Command-specific settings not covered by the model configuration.
    pub settings: BTreeMap<String, String>,
    /// SHA-256 of each input file, keyed by path.
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<String>,
    pub standardizer: Option<Standardizer>,
    pub started_unix: u64,
    pub finished_unix: u64,
}

impl RunManifest {
    pub fn new(command: &str, config: &ModelConfig) -> Self {
        Self {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config: config.clone(),
            settings: BTreeMap::new(),
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
            standardizer: None,
            started_unix: unix_now(),
            finished_unix: 0,
        }
    }

    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        self.inputs.insert(path.display().to_string(), sha256_file(path)?);
        Ok(())
    }

    pub fn setting(&mut self, key: &str, value: impl ToString) {
        self.settings.insert(key.into(), value.to_string());
    }

    /// Stamps the finish time and writes `manifest.json` into `dir`.
    pub fn finish(self, dir: &Path) -> Result<PathBuf> {
        self.finish_as(dir, "manifest.json")
    }

    /// Like [`RunManifest::finish`] with a custom file name.
    pub fn finish_as(mut self, dir: &Path, name: &str) -> Result<PathBuf> {
        self.finished_unix = unix_now();
        let path = dir.join(name);
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let json = serde_json::to_string_pretty(&self).expect("manifest serializes");
        std::fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
    }
}

/// Parses `key = value` lines. Blank lines and lines starting with `#` are
/// skipped; keys may use `-` or `_` interchangeably.
pub fn parse_config_text(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("config line {}: expected key = value", i + 1)))?;
        let key = key.trim().replace('_', "-");
        if key.is_empty() {
            return Err(Error::Config(format!("config line {}: empty key", i + 1)));
        }
        if out.insert(key.clone(), value.trim().to_string()).is_some() {
            return Err(Error::Config(format!("config line {}: duplicate key {key:?}", i + 1)));
        }
    }
    Ok(out)
}

pub fn read_config_file(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config_text(&text)
}

/// Writes raw bytes, creating parent directories.
pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut f = File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}
