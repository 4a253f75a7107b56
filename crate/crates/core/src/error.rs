use std::path::PathBuf;

/// Errors produced by the dkmips library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Vector dimensionalities disagree.
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    /// A parameter is outside its documented range (k, lambda, mu, ...).
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// A vector file is malformed; the message names the offending row.
    #[error("failed to load {path}: {reason}")]
    Load { path: PathBuf, reason: String },

    /// Underlying I/O failure, with the path that triggered it.
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    /// Caller violated an internal contract (e.g. inserting a selected item).
    #[error("logic error: {0}")]
    Logic(String),

    /// An exhaustive computation was refused because it would not terminate
    /// in reasonable time.
    #[error("instance too large: {0}")]
    TooLarge(String),
}

pub type Result<T> = std::result::Result<T, Error>;
