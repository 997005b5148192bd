use std::process::ExitCode;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Validation(_) => ExitCode::from(2),
            CliError::Runtime(_) => ExitCode::from(3),
        }
    }
}

impl From<bvi::Error> for CliError {
    fn from(e: bvi::Error) -> Self {
        use bvi::Error as E;
        match e {
            E::InvalidConfig { .. }
            | E::InvalidArgument(_)
            | E::Checkpoint(_)
            | E::Dataset(_)
            | E::DimensionMismatch { .. }
            | E::InvalidWeights(_)
            | E::Json(_)
            | E::Csv(_) => CliError::Validation(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn library_errors_map_to_exit_classes() {
        assert!(matches!(CliError::from(bvi::Error::InvalidConfig { field: "run.x".into(), message: "bad".into() }), CliError::Validation(_)));
        assert!(matches!(CliError::from(bvi::Error::Checkpoint("stale".into())), CliError::Validation(_)));
        assert!(matches!(CliError::from(bvi::Error::PoorAcceptance(0.01)), CliError::Runtime(_)));
        assert!(matches!(CliError::from(bvi::Error::DegenerateHessian), CliError::Runtime(_)));
    }
}
