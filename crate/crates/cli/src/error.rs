use thiserror::Error;

use si_rydberg::catalog::CatalogError;
use si_rydberg::fem::FemError;
use si_rydberg::gates::GateError;
use si_rydberg::interaction::InteractionError;
use si_rydberg::optimize::OptimizeError;
use si_rydberg::stark::StarkError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("solver: {0}")]
    Solver(String),
    #[error("integration: {0}")]
    Integration(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("validation failed: {0}")]
    Validation(String),
}

impl CliError {
    /// Process exit code.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            Self::Solver(_) => 3,
            Self::Integration(_) => 4,
            Self::Io(_) => 5,
            Self::Validation(_) => 6,
        }
    }
}

impl From<FemError> for CliError {
    fn from(e: FemError) -> Self {
        Self::Solver(e.to_string())
    }
}

impl From<CatalogError> for CliError {
    fn from(e: CatalogError) -> Self {
        match e {
            CatalogError::Format(_) | CatalogError::HashMismatch => Self::Io(std::io::Error::other(e.to_string())),
            other => Self::Solver(other.to_string()),
        }
    }
}

impl From<StarkError> for CliError {
    fn from(e: StarkError) -> Self {
        match e {
            StarkError::Solver(s) => s.into(),
            other => Self::Integration(other.to_string()),
        }
    }
}

impl From<InteractionError> for CliError {
    fn from(e: InteractionError) -> Self {
        Self::Integration(e.to_string())
    }
}

impl From<GateError> for CliError {
    fn from(e: GateError) -> Self {
        Self::Integration(e.to_string())
    }
}

impl From<OptimizeError> for CliError {
    fn from(e: OptimizeError) -> Self {
        Self::Integration(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        Self::Io(std::io::Error::other(e.to_string()))
    }
}
