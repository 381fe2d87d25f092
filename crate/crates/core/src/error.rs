use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("dimension must be at least 2 (got {0})")]
    DimensionTooSmall(usize),

    #[error("unsupported dimension {0}")]
    UnsupportedDimension(usize),

    #[error("no stored fiducial for d = {0}; use find_fiducial to search for one")]
    NoStoredFiducial(usize),

    #[error("ket is not normalized (norm {0})")]
    NotNormalized(f64),

    #[error("matrix is not Hermitian (max asymmetry {0:e})")]
    NotHermitian(f64),

    #[error("trace is not 1 (got {0})")]
    InvalidTrace(f64),

    #[error("matrix is not positive semidefinite (min eigenvalue {0:e})")]
    NotPositive(f64),

    #[error("invalid probability vector: {0}")]
    InvalidProbabilities(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("{file}:{line}: key `{key}`: {msg}")]
    Parse {
        file: String,
        line: usize,
        key: String,
        msg: String,
    },

    #[error("{0}")]
    Format(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

/// Turns a JSON decoding failure into a [`Error::Parse`] that names the file,
/// the line and, when serde reports one, the offending key.
pub(crate) fn json_parse_error(file: &str, e: serde_json::Error) -> Error {
    let msg = e.to_string();
    let key = msg.split('`').nth(1).unwrap_or("<json>").to_string();
    Error::Parse { file: file.to_string(), line: e.line(), key, msg }
}
