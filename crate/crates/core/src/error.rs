use std::path::PathBuf;

/// Errors raised by the valuation, data and training code.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("index out of range: {0}")]
    Range(String),

    #[error("sequence too short: need {needed} transition matrices, got {got}")]
    Length { needed: usize, got: usize },

    #[error("invalid contract: {0}")]
    InvalidContract(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unpriceable contract: premium coefficient {coefficient} is not positive")]
    Unpriceable { coefficient: f64 },

    #[error("schema error at row {row}: {message}")]
    Schema { row: usize, message: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("consistency check failed: {0}")]
    Consistency(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Error::Format {
            path: path.into(),
            message: message.to_string(),
        }
    }
}
