use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("range error: {0}")]
    Range(String),
    /// The requested accuracy was not reached; `best` is the last estimate.
    #[error("accuracy not reached ({what}); best estimate {best:e}")]
    Accuracy { what: String, best: f64 },
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("unsupported case: {hypothesis}")]
    UnsupportedCase { hypothesis: String },
    #[error("periods declared incommensurable: {0}")]
    Incommensurable(String),
    #[error("invalid model: {0}")]
    InvalidModel(String),
}

pub type Result<T> = std::result::Result<T, Error>;
