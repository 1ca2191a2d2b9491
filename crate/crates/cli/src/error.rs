use gbtd::analysis::AnalysisError;
use gbtd::constraints::ConstraintError;
use gbtd::io::IoError;
use gbtd::model::ModelError;
use gbtd::optim::OptimError;
use gbtd::tensor::TensorError;
use thiserror::Error;

/// Failure classes, each with its own process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        match e {
            IoError::Config(m) => CliError::Config(m),
            IoError::Model(m) => m.into(),
            IoError::Constraint(c) => c.into(),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Tensor(t) => t.into(),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<TensorError> for CliError {
    fn from(e: TensorError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<OptimError> for CliError {
    fn from(e: OptimError) -> Self {
        match e {
            OptimError::Numerical(m) => CliError::Numerical(m),
            OptimError::Model(m) => m.into(),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<ConstraintError> for CliError {
    fn from(e: ConstraintError) -> Self {
        match e {
            ConstraintError::Model(m) => m.into(),
            ConstraintError::Optim(o) => o.into(),
            ConstraintError::Dimension(m) => CliError::Numerical(m),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<AnalysisError> for CliError {
    fn from(e: AnalysisError) -> Self {
        match e {
            AnalysisError::Invalid(m) => CliError::Config(m),
            AnalysisError::ZeroSubspace => CliError::Numerical(e.to_string()),
            AnalysisError::Model(m) => m.into(),
            AnalysisError::Constraint(c) => c.into(),
            other => CliError::Data(other.to_string()),
        }
    }
}
