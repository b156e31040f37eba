//! Error type shared across the crate.
//!
//! Variants map onto process exit codes in the CLI: parse and configuration
//! problems exit 2, data and I/O problems exit 3, numerical failures exit 4.

use std::path::PathBuf;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Shape or internal-consistency violation (mismatched dimensions,
    /// wrong buffer length, atom dimension disagreement).
    #[error("structural error: {0}")]
    Structural(String),

    /// A value outside the mathematical domain of an operation
    /// (non-finite input, empty observation set, invalid fraction).
    #[error("domain error: {0}")]
    Domain(String),

    /// Malformed textual input, with the 1-based line it occurred on.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// Well-formed input whose content is invalid (label out of range,
    /// index past the declared dimensions, bad magic bytes).
    #[error("data error: {0}")]
    Data(String),

    /// Numerical breakdown: non-finite objective, failed bracketing,
    /// power iteration on unusable input.
    #[error("numerical error: {0}")]
    Numerical(String),

    /// Gradient is identically zero, so no singular pair exists.
    #[error("zero gradient: top singular pair undefined")]
    ZeroGradient,

    /// I/O failure, annotated with the path involved.
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// JSON serialization or deserialization failure.
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn structural(msg: impl Into<String>) -> Self {
        Error::Structural(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub(crate) fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Self {
        let path = path.into();
        move |source| Error::Io { path, source }
    }

    /// Process exit code the CLI uses for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parse { .. } | Error::Json(_) => 2,
            Error::Data(_) | Error::Io { .. } => 3,
            Error::Numerical(_) | Error::ZeroGradient => 4,
            Error::Structural(_) | Error::Domain(_) => 2,
        }
    }
}
