use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("covariance is not positive definite after {attempts} jitter doublings")]
    NotPositiveDefinite { attempts: usize },

    #[error("invalid mixture weights: {0}")]
    InvalidWeights(String),

    #[error("mixing weight {0} is outside [0, 1]")]
    InvalidAlpha(f64),

    #[error("invalid value for `{field}`: {message}")]
    InvalidConfig { field: String, message: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{non_finite} of {total} Monte Carlo integrand samples were non-finite (support mismatch)")]
    NonFiniteSamples { non_finite: usize, total: usize },

    #[error("degenerate Hessian: the log-residual has no positive curvature at the peak")]
    DegenerateHessian,

    #[error("non-finite peak location or Hessian (peak on the edge of the target's support?)")]
    NonFiniteHessian,

    #[error("objective was non-finite at {attempts} consecutive initial draws")]
    InitializationFailed { attempts: usize },

    #[error("quadrature box too small: {fraction:e} of the mass lies in boundary cells")]
    BoxTooSmall { fraction: f64 },

    #[error("Metropolis acceptance rate {0:.3} is outside [0.05, 0.6] after adaptation")]
    PoorAcceptance(f64),

    #[error("inconsistent checkpoint: {0}")]
    Checkpoint(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("iteration {iteration}: {source}")]
    Iteration {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn config(field: &str, message: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field: field.to_string(),
            message: message.into(),
        }
    }

    pub(crate) fn at_iteration(self, iteration: usize) -> Self {
        Error::Iteration {
            iteration,
            source: Box::new(self),
        }
    }
}
