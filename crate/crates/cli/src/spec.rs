//! The JSON experiment document: target selector, run configuration,
//! oracle settings and output directory.

use std::path::{Path, PathBuf};

use bvi::oracle::{mh_reference, quadrature_reference, Grid, MhConfig, ReferencePosterior};
use bvi::{
    config_fingerprint, gmm1d_four, gmm2d_five, load_csv_dataset, Banana, Cauchy, LogisticTarget, RunConfig, SensorModel,
    SensorTarget, TargetDensity,
};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TargetSpec {
    Cauchy,
    Gmm1d,
    Gmm2d {
        #[serde(default)]
        seed: u64,
    },
    Banana {
        #[serde(default = "default_curvature")]
        curvature: f64,
    },
    /// Sensor observation file (JSON).
    Sensor { path: PathBuf },
    /// Nodal-format CSV; the label is the first column unless named.
    Logistic {
        path: PathBuf,
        #[serde(default)]
        label_column: Option<String>,
        #[serde(default = "default_prior_scale")]
        prior_scale: f64,
    },
    /// Any CSV with a named ±1 or 0/1 label column.
    UserCsv {
        path: PathBuf,
        label_column: String,
        #[serde(default = "default_prior_scale")]
        prior_scale: f64,
    },
}

fn default_curvature() -> f64 {
    0.1
}

fn default_prior_scale() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum OracleSpec {
    /// Trapezoid quadrature on a uniform grid (d ≤ 2).
    Quadrature {
        lower: Vec<f64>,
        upper: Vec<f64>,
        points: usize,
    },
    /// Random-walk Metropolis.
    Mh(MhConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub target: TargetSpec,
    #[serde(default)]
    pub run: RunConfig,
    #[serde(default)]
    pub oracle: Option<OracleSpec>,
    pub output_dir: PathBuf,
}

/// A spec with its relative paths resolved against the spec file's
/// directory.
#[derive(Debug, Clone)]
pub struct LoadedSpec {
    pub spec: ExperimentSpec,
    pub base: PathBuf,
}

impl LoadedSpec {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
        let spec: ExperimentSpec =
            serde_json::from_str(&text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let loaded = Self { spec, base };
        loaded.validate()?;
        Ok(loaded)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.spec.output_dir)
    }

    fn validate(&self) -> Result<(), CliError> {
        let invalid = |field: &str, msg: &str| Err(CliError::Validation(format!("invalid value for `{field}`: {msg}")));
        match &self.spec.target {
            TargetSpec::Banana { curvature } if !(curvature.is_finite() && *curvature > 0.0) => {
                return invalid("target.curvature", "must be positive");
            }
            TargetSpec::Logistic { prior_scale, .. } | TargetSpec::UserCsv { prior_scale, .. }
                if !(prior_scale.is_finite() && *prior_scale > 0.0) =>
            {
                return invalid("target.prior_scale", "must be positive");
            }
            TargetSpec::Sensor { path } | TargetSpec::Logistic { path, .. } | TargetSpec::UserCsv { path, .. }
                if !self.resolve(path).is_file() =>
            {
                return invalid("target.path", &format!("{} does not exist", self.resolve(path).display()));
            }
            _ => {}
        }
        if let Some(OracleSpec::Quadrature { lower, upper, points }) = &self.spec.oracle {
            if *points < 2 {
                return invalid("oracle.points", "must be at least 2");
            }
            if lower.len() != upper.len() || lower.iter().zip(upper).any(|(a, b)| !(a < b)) {
                return invalid("oracle.lower", "must be below `oracle.upper` in every coordinate");
            }
        }
        Ok(())
    }

    pub fn build_target(&self) -> Result<Box<dyn TargetDensity>, CliError> {
        let target: Box<dyn TargetDensity> = match &self.spec.target {
            TargetSpec::Cauchy => Box::new(Cauchy::new()),
            TargetSpec::Gmm1d => Box::new(gmm1d_four()),
            TargetSpec::Gmm2d { seed } => Box::new(gmm2d_five(*seed)),
            TargetSpec::Banana { curvature } => Box::new(Banana::new(*curvature)),
            TargetSpec::Sensor { path } => Box::new(SensorTarget::new(SensorModel::load(self.resolve(path))?)?),
            TargetSpec::Logistic {
                path,
                label_column,
                prior_scale,
            } => Box::new(LogisticTarget::new(
                load_csv_dataset(self.resolve(path), label_column.as_deref())?.with_prior_scale(*prior_scale)?,
            )),
            TargetSpec::UserCsv {
                path,
                label_column,
                prior_scale,
            } => Box::new(LogisticTarget::new(
                load_csv_dataset(self.resolve(path), Some(label_column))?.with_prior_scale(*prior_scale)?,
            )),
        };
        self.spec.run.validate(target.dim())?;
        if let Some(OracleSpec::Quadrature { lower, .. }) = &self.spec.oracle {
            if lower.len() != target.dim() {
                return Err(CliError::Validation(format!(
                    "invalid value for `oracle.lower`: expected {} entries, got {}",
                    target.dim(),
                    lower.len()
                )));
            }
        }
        if let Some(OracleSpec::Mh(cfg)) = &self.spec.oracle {
            cfg.validate(target.dim())?;
        }
        Ok(target)
    }

    /// Fingerprint of everything that determines a run except its length.
    pub fn fingerprint(&self) -> Result<String, CliError> {
        let target = serde_json::to_value(&self.spec.target).map_err(|e| CliError::Runtime(e.to_string()))?;
        Ok(config_fingerprint(&target, &self.spec.run)?)
    }

    pub fn reference(&self, target: &dyn TargetDensity) -> Result<Option<ReferencePosterior>, CliError> {
        Ok(match &self.spec.oracle {
            None => None,
            Some(OracleSpec::Quadrature { lower, upper, points }) => {
                Some(quadrature_reference(target, &Grid::uniform(lower, upper, *points)?)?)
            }
            Some(OracleSpec::Mh(cfg)) => Some(mh_reference(target, cfg)?),
        })
    }
}
