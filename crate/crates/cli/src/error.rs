use seqcluster::cah::CahError;
use seqcluster::checkpoint::CheckpointError;
use seqcluster::datasets::DatasetError;
use seqcluster::evaluation::EvalError;
use seqcluster::model::ModelError;
use seqcluster::numerics::NumericsError;
use thiserror::Error;

/// Failures grouped by process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad configuration or usage (exit 2).
    #[error("configuration error: {0}")]
    Config(String),
    /// Non-finite values or divergence (exit 3).
    #[error("numeric failure: {0}")]
    Numeric(String),
    /// Unreadable input or unwritable output (exit 4).
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::Io(_) => 4,
        }
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        match e {
            DatasetError::Config(_) | DatasetError::EmptyStream { .. } => CliError::Config(e.to_string()),
            DatasetError::Io { .. } | DatasetError::MissingFile(_) | DatasetError::Corrupt { .. } => {
                CliError::Io(e.to_string())
            }
        }
    }
}

fn numeric_kind(e: &ModelError) -> bool {
    match e {
        ModelError::Numerics(NumericsError::NonFinite { .. }) | ModelError::NonFiniteLoss { .. } => true,
        ModelError::Diverged { .. } => true,
        ModelError::Numerics(_) | ModelError::Config(_) => false,
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        if numeric_kind(&e) {
            CliError::Numeric(e.to_string())
        } else {
            CliError::Config(e.to_string())
        }
    }
}

impl From<CahError> for CliError {
    fn from(e: CahError) -> Self {
        match e {
            CahError::Model(m) => m.into(),
            CahError::NonFinite(_) => CliError::Numeric(e.to_string()),
            CahError::Baseline(_) | CahError::Metrics(_) | CahError::Config(_) => CliError::Config(e.to_string()),
        }
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        match e {
            CheckpointError::Io { .. } => CliError::Io(e.to_string()),
            CheckpointError::Magic { .. } | CheckpointError::Malformed { .. } => CliError::Config(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        CliError::Config(e.to_string())
    }
}
