//! Datasets, CSV ingestion and standardization.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{Error, Result};

/// Training inputs and responses, optionally with test inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    /// `n × I`, one row per point.
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    /// `m × I` inputs to predict at.
    pub x_test: Option<DMatrix<f64>>,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        let data = Self { x, y, x_test: None };
        data.validate()?;
        Ok(data)
    }

    pub fn with_test(mut self, x_test: DMatrix<f64>) -> Result<Self> {
        self.x_test = Some(x_test);
        self.validate()?;
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn m(&self) -> usize {
        self.x_test.as_ref().map_or(0, |t| t.nrows())
    }

    /// Training rows followed by test rows.
    pub fn joint_inputs(&self) -> DMatrix<f64> {
        stack_rows(&self.x, self.x_test.as_ref())
    }

    pub fn validate(&self) -> Result<()> {
        if self.x.nrows() != self.y.len() {
            return Err(Error::Shape(format!(
                "{} input rows but {} responses",
                self.x.nrows(),
                self.y.len()
            )));
        }
        if let Some(t) = &self.x_test {
            if t.ncols() != self.x.ncols() {
                return Err(Error::Shape(format!(
                    "test inputs have {} columns, training inputs {}",
                    t.ncols(),
                    self.x.ncols()
                )));
            }
            if t.iter().any(|v| !v.is_finite()) {
                return Err(Error::Data("test inputs contain non-finite values".into()));
            }
        }
        if self.x.iter().chain(self.y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Data("training data contain non-finite values".into()));
        }
        Ok(())
    }
}

pub(crate) fn stack_rows(top: &DMatrix<f64>, bottom: Option<&DMatrix<f64>>) -> DMatrix<f64> {
    match bottom {
        None => top.clone(),
        Some(b) => {
            let mut out = DMatrix::zeros(top.nrows() + b.nrows(), top.ncols());
            out.view_mut((0, 0), top.shape()).copy_from(top);
            out.view_mut((top.nrows(), 0), b.shape()).copy_from(b);
            out
        }
    }
}

/// A numeric table read from CSV.
#[derive(Clone, Debug)]
pub struct Table {
    pub columns: Vec<String>,
    pub x: DMatrix<f64>,
    /// Present when the target column exists in the file.
    pub y: Option<DVector<f64>>,
}

/// Reads a headered CSV; every column other than `target` becomes an input.
///
/// The target column is required. Cells must parse as finite numbers; the
/// error names the line and column of the first offending cell.
pub fn ingest_csv(path: impl AsRef<Path>, target: &str) -> Result<Dataset> {
    let table = read_table(path.as_ref(), Some(target), true)?;
    let y = table.y.expect("target required");
    Dataset::new(table.x, y)
}

/// Like [`ingest_csv`] but the target column is optional (test files).
pub fn read_table(path: &Path, target: Option<&str>, require_target: bool) -> Result<Table> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Data(format!("{}: cannot read header: {e}", path.display())))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let target_idx = target.and_then(|t| headers.iter().position(|h| h == t));
    if require_target && target_idx.is_none() {
        return Err(Error::Data(format!(
            "{}: target column {:?} not found in header {:?}",
            path.display(),
            target.unwrap_or_default(),
            headers
        )));
    }
    let columns: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|(i, _)| Some(*i) != target_idx)
        .map(|(_, h)| h.clone())
        .collect();

    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut rows = 0;
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record =
            record.map_err(|e| Error::Data(format!("{}: line {line}: {e}", path.display())))?;
        if record.len() != headers.len() {
            return Err(Error::Data(format!(
                "{}: line {line}: expected {} fields, found {}",
                path.display(),
                headers.len(),
                record.len()
            )));
        }
        for (j, cell) in record.iter().enumerate() {
            let value: f64 = cell.trim().parse().map_err(|_| {
                Error::Data(format!(
                    "{}: line {line}, column {:?}: {cell:?} is not a number",
                    path.display(),
                    headers[j]
                ))
            })?;
            if !value.is_finite() {
                return Err(Error::Data(format!(
                    "{}: line {line}, column {:?}: non-finite value {cell:?}",
                    path.display(),
                    headers[j]
                )));
            }
            if Some(j) == target_idx {
                ys.push(value);
            } else {
                xs.push(value);
            }
        }
        rows += 1;
    }
    let x = DMatrix::from_row_slice(rows, columns.len(), &xs);
    Ok(Table {
        columns,
        x,
        y: target_idx.map(|_| DVector::from_vec(ys)),
    })
}

/// Per-column affine map applied to inputs (mean 0, sd 1) and the
/// response (centered only).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub x_mean: Vec<f64>,
    pub x_sd: Vec<f64>,
    pub y_mean: f64,
}

impl Standardizer {
    /// Fits on training data. Constant columns keep sd 1.
    pub fn fit(x: &DMatrix<f64>, y: &DVector<f64>) -> Self {
        let n = x.nrows() as f64;
        let mut x_mean = Vec::with_capacity(x.ncols());
        let mut x_sd = Vec::with_capacity(x.ncols());
        for col in x.column_iter() {
            let mean = col.sum() / n;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
            let sd = var.sqrt();
            x_mean.push(mean);
            x_sd.push(if sd > 0.0 { sd } else { 1.0 });
        }
        let y_mean = if y.is_empty() { 0.0 } else { y.mean() };
        Self { x_mean, x_sd, y_mean }
    }

    pub fn transform_x(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| (x[(i, j)] - self.x_mean[j]) / self.x_sd[j])
    }

    pub fn inverse_x(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| x[(i, j)] * self.x_sd[j] + self.x_mean[j])
    }

    pub fn transform_y(&self, y: &DVector<f64>) -> DVector<f64> {
        y.map(|v| v - self.y_mean)
    }

    pub fn inverse_y(&self, y: &[f64]) -> Vec<f64> {
        y.iter().map(|v| v + self.y_mean).collect()
    }
}
