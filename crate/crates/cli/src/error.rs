use std::path::PathBuf;

use thiserror::Error;

/// Failure categories; each maps to its own exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("missing input: {0}")]
    Missing(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("malformed input: {0}")]
    Format(String),
    #[error(transparent)]
    Train(logictree::train::TrainError),
    #[error("download failed: {0}")]
    Fetch(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io { .. } => 3,
            CliError::Missing(_) => 4,
            CliError::Config(_) => 5,
            CliError::Format(_) => 6,
            CliError::Train(_) => 7,
            CliError::Fetch(_) => 8,
        }
    }

    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
        let path = path.into();
        move |source| {
            if source.kind() == std::io::ErrorKind::NotFound {
                CliError::Missing(path.display().to_string())
            } else {
                CliError::Io { path, source }
            }
        }
    }
}

impl From<logictree::data::DataError> for CliError {
    fn from(e: logictree::data::DataError) -> Self {
        use logictree::data::DataError;
        match e {
            DataError::Io { path, source } => CliError::io(path)(source),
            DataError::Bits(_) | DataError::Split { .. } | DataError::Thresholds => CliError::Config(e.to_string()),
            other => CliError::Format(other.to_string()),
        }
    }
}

impl From<logictree::train::TrainError> for CliError {
    fn from(e: logictree::train::TrainError) -> Self {
        use logictree::train::TrainError;
        match e {
            TrainError::Io { path, source } => CliError::io(path)(source),
            TrainError::Config(_) | TrainError::InputShape { .. } | TrainError::Model(_) => CliError::Config(e.to_string()),
            TrainError::Checkpoint { .. } => CliError::Format(e.to_string()),
            other => CliError::Train(other),
        }
    }
}

impl From<logictree::model::ModelError> for CliError {
    fn from(e: logictree::model::ModelError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<logictree::export::ExportError> for CliError {
    fn from(e: logictree::export::ExportError) -> Self {
        CliError::Format(e.to_string())
    }
}

impl From<logictree::bitsim::BitsimError> for CliError {
    fn from(e: logictree::bitsim::BitsimError) -> Self {
        CliError::Format(e.to_string())
    }
}
