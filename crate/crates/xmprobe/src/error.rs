//! Error types shared across the toolkit.

use thiserror::Error;

/// All failure modes surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// An operand had the wrong dimensions. Names the offending operand.
    #[error("shape mismatch in {op}: expected {expected}, got {got}")]
    Shape {
        op: String,
        expected: String,
        got: String,
    },

    /// Invalid or infeasible configuration (sizes, fold counts, k lists...).
    #[error("configuration error: {0}")]
    Config(String),

    /// An API was called outside its contract (empty sequence, missing cache...).
    #[error("usage error: {0}")]
    Usage(String),

    /// Non-finite values or other numeric breakdowns.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Malformed on-disk input (bad magic, version, structure).
    #[error("format error: {0}")]
    Format(String),

    /// A binary blob is shorter or longer than the manifest implies.
    #[error("truncated or oversized blob {path}: expected {expected} bytes, found {found}")]
    Truncated {
        path: String,
        expected: u64,
        found: u64,
    },

    /// Bad data tied to one record.
    #[error("data error in record {record_id}: {message}")]
    Data { record_id: u64, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("toml error: {0}")]
    Toml(String),
}

impl Error {
    pub(crate) fn shape(op: &str, expected: impl Into<String>, got: impl Into<String>) -> Self {
        Error::Shape {
            op: op.to_string(),
            expected: expected.into(),
            got: got.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
