use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Inputs violate an operation's shape or argument contract.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Arithmetic outside an op's domain (exact-zero divisor, negative sqrt).
    #[error("numeric domain error: {0}")]
    NumericDomain(String),

    /// A loss or forward pass produced NaN or infinity.
    #[error("numeric failure: {0}")]
    NumericFailure(String),

    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    #[error("degenerate reference: zero-mean bands {bands:?}")]
    DegenerateReference { bands: Vec<usize> },

    #[error("insufficient support: {0}")]
    InsufficientSupport(String),

    #[error("malformed header in {path}: {reason}")]
    MalformedHeader { path: PathBuf, reason: String },

    #[error("truncated payload in {path}: expected {expected} bytes, found {found}")]
    TruncatedPayload {
        path: PathBuf,
        expected: usize,
        found: usize,
    },

    #[error("non-finite value in {path} at element {index}")]
    NonFinite { path: PathBuf, index: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by arithmetic rather than by bad inputs.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::NumericDomain(_) | Error::NumericFailure(_))
    }
}
