//! Boosting variational inference with Gaussian mixtures.
//!
//! Starting from a single Gaussian `q₁`, each iteration finds the peak of
//! the log-residual `log(f/q)`, matches a Gaussian to it by a Laplace
//! approximation, and mixes it in with a weight chosen by projected SGD on
//! the ELBO. The target only needs to evaluate an unnormalized log-density.
//!
//! ```no_run
//! use bvi::{run_bvi, Banana, RunConfig};
//!
//! let cfg = RunConfig { iterations: 100, init_cov_scale: 1.0, ..Default::default() };
//! let (q, trace) = run_bvi(&Banana::new(0.1), &cfg).unwrap();
//! println!("{} components, ELBO {:?}", q.len(), trace.elbo_series().last());
//! ```

pub mod boost;
pub mod error;
pub mod estimators;
pub mod gaussmix;
pub mod oracle;
pub mod rng;
pub mod search;
pub mod targets;
pub mod weights;

pub use boost::{config_fingerprint, resume, run_bvi, BoostTrace, Checkpoint, IterationRecord, IterationStatus, RunConfig, RunStatus};
pub use error::{Error, Result};
pub use estimators::{alpha_gradient_estimate, discrepancy_estimate, elbo_estimate, gamma, McEstimate};
pub use gaussmix::{GaussianComponent, Mixture};
pub use search::{build_component, find_peak, stabilized_log_residual, HessianMode, LaplacePeak, SearchConfig};
pub use targets::{
    gmm1d_four, gmm2d_five, load_csv_dataset, Banana, Cauchy, FnTarget, GaussianMixtureTarget, LogisticModel, LogisticTarget,
    SensorModel, SensorTarget, TargetDensity,
};
pub use weights::{projected_sgd, solve_alpha, AlphaSolution, SgdConfig};
