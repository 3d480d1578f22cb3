use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    Shape {
        context: String,
        expected: String,
        actual: String,
    },

    #[error("integration produced a non-finite state at step {step}")]
    Integration { step: usize },

    #[error("trajectory has {len} points; at least {min} are required")]
    TooShort { len: usize, min: usize },

    #[error("dimension {dim} is flat (min = max = {value}); cannot normalize")]
    FlatDimension { dim: usize, value: f64 },

    #[error("unknown task id {id}; supported ids: {supported:?}")]
    UnknownTask { id: u32, supported: Vec<u32> },

    #[error("{0}")]
    Data(String),

    #[error("{path}: line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("stale activation tape (tape from network version {tape}, network is at {network})")]
    StaleTape { tape: u64, network: u64 },

    #[error("checkpoint format version {found} is not supported (this build reads version {supported})")]
    Version { found: u32, supported: u32 },

    #[error("checkpoint checksum mismatch (header {expected}, content {actual})")]
    Checksum { expected: String, actual: String },

    #[error("truncated checkpoint: {0}")]
    Truncated(String),

    #[error("bad checkpoint: {0}")]
    BadCheckpoint(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    pub(crate) fn shape(
        context: impl Into<String>,
        expected: impl std::fmt::Display,
        actual: impl std::fmt::Display,
    ) -> Self {
        Error::Shape {
            context: context.into(),
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    /// Errors caused by numerics rather than by the caller's input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Integration { .. } | Error::NonFinite(_)
        )
    }
}
