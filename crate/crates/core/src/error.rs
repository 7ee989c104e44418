use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// A precondition on an operation's inputs was violated.
    #[error("domain error: {0}")]
    Domain(String),

    /// Episode extraction failed on an otherwise valid trajectory.
    #[error("extraction error: {0}")]
    Extraction(String),

    /// A CSV row could not be parsed.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: u64, msg: String },

    /// A file does not match the expected schema.
    #[error("schema error: {0}")]
    Schema(String),

    /// Input data is too degenerate to process (e.g. fewer distinct
    /// points than clusters, single-class training data).
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    /// Cluster labeling could not be resolved.
    #[error("unresolved label: {0}")]
    UnresolvedLabel(String),

    /// A non-finite value appeared in a numeric computation.
    #[error("numeric guard: {0}")]
    NumericGuard(String),

    /// Invalid configuration or model/config mismatch.
    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn extraction(msg: impl Into<String>) -> Self {
        Error::Extraction(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
