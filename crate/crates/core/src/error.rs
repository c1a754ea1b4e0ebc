use std::path::PathBuf;

/// Errors raised anywhere in the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("unknown token `{0}`")]
    UnknownToken(String),

    #[error("token id {0} is outside the vocabulary")]
    TokenOutOfRange(usize),

    #[error("token `{0}` is not in the allowed support of this context")]
    OutsideSupport(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("environment fault: {0}")]
    Environment(String),

    #[error("enumeration refused: {branching}^{horizon} = {estimate:.3e} trajectories exceeds the limit of {limit:.0e}")]
    EnumerationTooLarge {
        branching: usize,
        horizon: usize,
        estimate: f64,
        limit: f64,
    },

    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
