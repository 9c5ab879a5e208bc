use mdlm_core::engine::EngineError;
use mdlm_core::models::ModelError;
use mdlm_core::scoring::ScoringError;
use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad or missing configuration. Exit status 1.
    #[error("config error: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    /// Failure while talking to or evaluating a model. Exit status 2.
    #[error("model error: {0}")]
    Model(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Io { .. } => 1,
            CliError::Model(_) => 2,
        }
    }

    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        CliError::Model(e.to_string())
    }
}

impl From<EngineError> for CliError {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::InvalidPolicy(_) | EngineError::VocabMismatch { .. } | EngineError::Canvas(_) => {
                CliError::Config(e.to_string())
            }
            e => CliError::Model(e.to_string()),
        }
    }
}

impl From<ScoringError> for CliError {
    fn from(e: ScoringError) -> Self {
        match e {
            ScoringError::LengthMismatch { .. }
            | ScoringError::ChainLength { .. }
            | ScoringError::ZeroStride
            | ScoringError::AnswerNotMasked(_)
            | ScoringError::Canvas(_) => CliError::Config(e.to_string()),
            ScoringError::Engine(e) => e.into(),
            e => CliError::Model(e.to_string()),
        }
    }
}
