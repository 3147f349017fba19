//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid system or experiment configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// Matrix/vector dimensions do not match.
    #[error("dimension mismatch: {0}")]
    Dim(String),

    /// A collection is too small (or empty) for the requested operation.
    #[error("size error: {0}")]
    Size(String),

    /// A numeric argument violates the operation's domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// The channel matrix is zero or otherwise unusable.
    #[error("degenerate channel: {0}")]
    DegenerateChannel(String),

    /// The pilot matrix does not have full row rank in the requested regime.
    #[error("rank error: {0}")]
    Rank(String),

    /// A serialized artifact is malformed.
    #[error("format error: {0}")]
    Format(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// A pipeline stage failed; carries the stage name for CLI reporting.
    #[error("stage '{stage}' failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Wraps an error with the pipeline stage it occurred in.
    pub fn in_stage(self, stage: &str) -> Error {
        Error::Stage {
            stage: stage.to_string(),
            source: Box::new(self),
        }
    }

    /// Name of the failing stage, if this is a stage error.
    pub fn stage_name(&self) -> Option<&str> {
        match self {
            Error::Stage { stage, .. } => Some(stage),
            _ => None,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
