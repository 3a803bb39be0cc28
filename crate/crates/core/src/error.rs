use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid settings or an unsupported combination of options.
    #[error("configuration error: {0}")]
    Config(String),

    /// A file does not follow the expected binary or text layout.
    #[error("format error: {0}")]
    Format(String),

    #[error("length mismatch: expected {expected} bytes, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("consistency error: {0}")]
    Consistency(String),

    #[error("shape error: expected {expected:?}, got {got:?}")]
    Shape { expected: Vec<usize>, got: Vec<usize> },

    /// A value outside the domain an operation is defined on.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("integrity error in entry `{entry}`: {reason}")]
    Integrity { entry: String, reason: String },

    #[error("training fault at step {step}: {reason}")]
    Training { step: usize, reason: String },

    #[error("integration fault at step {step}: non-finite state")]
    Integration { step: usize },

    #[error("degenerate trajectory: chord norm {chord:e} below threshold")]
    Degenerate { chord: f64 },

    #[error("analysis error: {0}")]
    Analysis(String),

    /// Two checkpoints cannot be compared, e.g. different backbones.
    #[error("comparison invalid: {0}")]
    ComparisonInvalid(String),

    #[error("I/O error on {path:?}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn shape(expected: &[usize], got: &[usize]) -> Self {
        Error::Shape {
            expected: expected.to_vec(),
            got: got.to_vec(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by user-provided settings rather than a runtime fault.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_))
    }
}
