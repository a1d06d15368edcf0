use std::path::PathBuf;

use thiserror::Error;

/// Exit status for a rejected configuration.
pub const EXIT_VALIDATION: i32 = 2;
/// Exit status for a numerical failure or an unsatisfied bound.
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    /// The configuration is malformed or outside the parameter domains.
    #[error("{path}: {message}")]
    Validation { path: String, message: String },
    /// A kernel rejected the inputs or failed during computation. `path`
    /// names the config field that selected the failing stage.
    #[error("{path}: {name}: {source}")]
    Kernel {
        path: String,
        name: &'static str,
        #[source]
        source: eigenpath::Error,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0} bound report(s) not satisfied")]
    BoundViolation(usize),
    #[error("verification failed: {0} invariant(s) violated")]
    VerifyFailed(usize),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn validation(path: impl Into<String>, message: impl Into<String>) -> Self {
        CliError::Validation {
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn kernel(path: impl Into<String>, source: eigenpath::Error) -> Self {
        CliError::Kernel {
            path: path.into(),
            name: source.name(),
            source,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation { .. } => EXIT_VALIDATION,
            CliError::Kernel { source, .. } if is_input_error(source) => EXIT_VALIDATION,
            CliError::Io { .. } => EXIT_VALIDATION,
            CliError::Kernel { .. } | CliError::BoundViolation(_) => EXIT_NUMERICAL,
            CliError::VerifyFailed(_) => 1,
        }
    }
}

/// Kernel errors that reject the instance or its parameters rather than
/// arising during the computation.
pub fn is_input_error(e: &eigenpath::Error) -> bool {
    use eigenpath::Error::*;
    matches!(
        e,
        DimensionMismatch(_)
            | NonNormal { .. }
            | NonHermitian { .. }
            | InvalidWindow(_)
            | InvalidMarkedSet(_)
            | SingularA
            | KappaTooSmall { .. }
            | NormTooLarge { .. }
            | StepTooLarge { .. }
            | GapModelMissing
            | InvalidState(_)
            | InvalidParameter(_)
            | Unsupported(_)
            | EmptyWindow
            | FullWindow
    )
}
