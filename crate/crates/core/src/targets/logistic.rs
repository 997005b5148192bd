use std::io::Read;
use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use super::TargetDensity;
use crate::error::{Error, Result};
use crate::rng;

/// Bayesian logistic regression data: design (intercept included), ±1
/// labels and an isotropic Gaussian prior scale.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticModel {
    design: DMatrix<f64>,
    labels: Vec<f64>,
    prior_scale: f64,
}

impl LogisticModel {
    pub fn new(design: DMatrix<f64>, labels: Vec<f64>, prior_scale: f64) -> Result<Self> {
        if design.nrows() != labels.len() {
            return Err(Error::Dataset(format!(
                "{} design rows but {} labels",
                design.nrows(),
                labels.len()
            )));
        }
        if design.nrows() == 0 || design.ncols() == 0 {
            return Err(Error::Dataset("empty design matrix".into()));
        }
        if design.iter().any(|v| !v.is_finite()) {
            return Err(Error::Dataset("design contains NaN or infinite entries".into()));
        }
        if labels.iter().any(|&y| y != 1.0 && y != -1.0) {
            return Err(Error::Dataset("labels must be +1 or -1".into()));
        }
        if !(prior_scale > 0.0 && prior_scale.is_finite()) {
            return Err(Error::config("prior_scale", "must be positive"));
        }
        Ok(Self {
            design,
            labels,
            prior_scale,
        })
    }

    /// Features `N(0, 1)` plus an intercept, coefficients `N(0, 0.5²)`,
    /// labels drawn from the logistic likelihood.
    pub fn synthetic(n: usize, p: usize, seed: u64) -> Result<Self> {
        if n == 0 || p == 0 {
            return Err(Error::InvalidArgument("synthetic dataset needs n, p >= 1".into()));
        }
        let mut rng = rng::stream(seed);
        let beta: Vec<f64> = (0..p).map(|_| 0.5 * rng.sample::<f64, _>(StandardNormal)).collect();
        let mut design = DMatrix::from_element(n, p, 1.0);
        for i in 0..n {
            for j in 1..p {
                design[(i, j)] = rng.sample(StandardNormal);
            }
        }
        let labels = (0..n)
            .map(|i| {
                let z: f64 = (0..p).map(|j| design[(i, j)] * beta[j]).sum();
                let prob = 1.0 / (1.0 + (-z).exp());
                if rng.random::<f64>() < prob { 1.0 } else { -1.0 }
            })
            .collect();
        Self::new(design, labels, 1.0)
    }

    pub fn with_prior_scale(mut self, prior_scale: f64) -> Result<Self> {
        if !(prior_scale > 0.0 && prior_scale.is_finite()) {
            return Err(Error::config("prior_scale", "must be positive"));
        }
        self.prior_scale = prior_scale;
        Ok(self)
    }

    pub fn design(&self) -> &DMatrix<f64> {
        &self.design
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn prior_scale(&self) -> f64 {
        self.prior_scale
    }

    pub fn num_rows(&self) -> usize {
        self.design.nrows()
    }

    /// Number of coefficients, intercept included.
    pub fn num_predictors(&self) -> usize {
        self.design.ncols()
    }
}

/// `log g(z)` for the logistic sigmoid, stable for either sign of `z`.
fn log_sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        -(-z).exp().ln_1p()
    } else {
        z - z.exp().ln_1p()
    }
}

/// `log f(β) = -‖β‖²/(2s²) + Σ log g(yᵢ xᵢᵀβ)`.
#[derive(Debug, Clone)]
pub struct LogisticTarget {
    model: LogisticModel,
    signed_rows: DMatrix<f64>,
}

impl LogisticTarget {
    pub fn new(model: LogisticModel) -> Self {
        let mut signed_rows = model.design.clone();
        for (i, y) in model.labels.iter().enumerate() {
            signed_rows.row_mut(i).scale_mut(*y);
        }
        Self { model, signed_rows }
    }

    pub fn model(&self) -> &LogisticModel {
        &self.model
    }

    fn margins(&self, beta: &[f64]) -> impl Iterator<Item = f64> + '_ {
        let p = self.model.num_predictors();
        let beta = beta.to_vec();
        (0..self.signed_rows.nrows()).map(move |i| (0..p).map(|j| self.signed_rows[(i, j)] * beta[j]).sum())
    }
}

impl TargetDensity for LogisticTarget {
    fn dim(&self) -> usize {
        self.model.num_predictors()
    }

    fn log_density(&self, beta: &[f64]) -> f64 {
        let s2 = self.model.prior_scale * self.model.prior_scale;
        let prior = -0.5 * beta.iter().map(|b| b * b).sum::<f64>() / s2;
        prior + self.margins(beta).map(log_sigmoid).sum::<f64>()
    }

    fn gradient(&self, beta: &[f64]) -> Option<Vec<f64>> {
        let s2 = self.model.prior_scale * self.model.prior_scale;
        let mut g: Vec<f64> = beta.iter().map(|b| -b / s2).collect();
        for (i, z) in self.margins(beta).enumerate() {
            // d/dz log g(z) = g(-z)
            let w = 1.0 / (1.0 + z.exp());
            for (j, gj) in g.iter_mut().enumerate() {
                *gj += w * self.signed_rows[(i, j)];
            }
        }
        Some(g)
    }
}

/// Load a comma-separated dataset with a header row.
///
/// `label_column` names the response (the first column when `None`); labels
/// must be `±1` or `0/1`, with `0` mapped to `-1`. All other columns become
/// predictors and an intercept column is prepended.
pub fn load_csv_dataset(path: impl AsRef<Path>, label_column: Option<&str>) -> Result<LogisticModel> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::Dataset(format!("{}: {e}", path.display())))?;
    let model = read_csv_dataset(file, label_column)?;
    log::info!(
        "loaded {}: {} rows, {} coefficients (intercept included)",
        path.display(),
        model.num_rows(),
        model.num_predictors()
    );
    Ok(model)
}

pub(crate) fn read_csv_dataset(reader: impl Read, label_column: Option<&str>) -> Result<LogisticModel> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(false).trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let label_idx = match label_column {
        None => 0,
        Some(name) => headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Dataset(format!("no column named `{name}`")))?,
    };
    let p = headers.len();
    let mut rows: Vec<f64> = Vec::new();
    let mut labels = Vec::new();
    for (line, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| Error::Dataset(format!("row {}: {e}", line + 1)))?;
        rows.push(1.0);
        for (j, field) in record.iter().enumerate() {
            let v: f64 = field
                .parse()
                .map_err(|_| Error::Dataset(format!("row {}: cannot parse `{field}`", line + 1)))?;
            if j == label_idx {
                labels.push(match v {
                    v if v == 1.0 => 1.0,
                    v if v == 0.0 || v == -1.0 => -1.0,
                    _ => return Err(Error::Dataset(format!("row {}: non-binary label {v}", line + 1))),
                });
            } else {
                rows.push(v);
            }
        }
    }
    let design = DMatrix::from_row_slice(labels.len(), p, &rows);
    LogisticModel::new(design, labels, 1.0)
}
