//! Exit-code taxonomy: 0 ok, 2 configuration, 3 numeric failure,
//! 4 non-convergence (result still written).

use fcop_core::Error as CoreError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("fit did not converge: {0}")]
    NonConvergence(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::NonConvergence(_) => 4,
            CliError::Io(_) => 2,
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match &e {
            CoreError::InvalidParameter(_)
            | CoreError::DimensionMismatch(_)
            | CoreError::UnsupportedVariance(_)
            | CoreError::WrongFactorFamily(_)
            | CoreError::BoundaryUniform(_) => CliError::Config(e.to_string()),
            CoreError::Domain(_)
            | CoreError::NotPositiveDefinite { .. }
            | CoreError::QuadratureNonConvergence { .. }
            | CoreError::BracketFailure(_)
            | CoreError::NonFinite(_) => CliError::Numeric(e.to_string()),
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Config(format!("json: {e}"))
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Config(format!("csv: {e}"))
    }
}
