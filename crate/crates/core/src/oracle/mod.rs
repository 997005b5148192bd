//! Ground-truth machinery for tests and evaluation: grid quadrature in one
//! or two dimensions, a random-walk Metropolis sampler for anything larger,
//! and the comparison metrics.

mod metrics;
mod mh;
mod quadrature;

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use metrics::{exact_kl, gaussian_kl, rem, rem_of_means};
pub use mh::{batch_means_std_error, mh_reference, MhConfig};
pub use quadrature::{quadrature_discrepancy, quadrature_kl, quadrature_reference, Grid, MAX_BOUNDARY_MASS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReferenceSource {
    QuadratureGrid,
    MhSamples,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub acceptance_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub effective_sample_size: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_std_error: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub covariance_std_error: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub boundary_mass: Option<f64>,
}

/// A reference posterior summary. Samples are kept in memory for MH
/// references but are not part of the JSON form; export them with
/// [`ReferencePosterior::write_samples_csv`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferencePosterior {
    pub source: ReferenceSource,
    pub mean: Vec<f64>,
    pub covariance: Vec<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub log_normalizer: Option<f64>,
    pub diagnostics: Diagnostics,
    #[serde(skip)]
    pub samples: Option<Vec<Vec<f64>>>,
}

impl ReferencePosterior {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn write_samples_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let samples = self
            .samples
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("reference has no samples".into()))?;
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        write_points_csv(&mut w, self.dim(), samples.iter().map(|x| x.as_slice()))
    }
}

/// Header `theta1,…,thetaD` followed by one point per row, floats in
/// shortest round-trip form.
pub fn write_points_csv<'a, W: Write>(w: &mut W, dim: usize, points: impl IntoIterator<Item = &'a [f64]>) -> Result<()> {
    let header: Vec<String> = (1..=dim).map(|k| format!("theta{k}")).collect();
    writeln!(w, "{}", header.join(","))?;
    for x in points {
        let row: Vec<String> = x.iter().map(|v| v.to_string()).collect();
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()?;
    Ok(())
}
