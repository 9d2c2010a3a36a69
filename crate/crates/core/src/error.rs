use thiserror::Error;

/// Errors surfaced by the harness library.
///
/// Domain outcomes (infeasible actions, failed episodes) are never errors;
/// they travel as [`crate::model::StepEvent`]s instead.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    Shape {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("snapshot incompatible: built by format version {found}, simulator expects {expected}")]
    SnapshotVersion { expected: u32, found: u32 },

    #[error("non-finite value during training at step {step}: {detail}")]
    NonFinite { step: u64, detail: String },

    #[error("training data rejected: {0}")]
    Data(String),

    #[error("undefined metric: {0}")]
    Undefined(String),

    #[error("malformed input: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn parse(msg: impl Into<String>) -> Self {
        Error::Parse(msg.into())
    }

    /// True for the error classes the CLI maps to its configuration exit code.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_) | Error::Parse(_))
    }
}
