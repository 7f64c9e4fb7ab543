use thiserror::Error;

/// Errors raised by model construction, fitting and the experiment pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: String,
        expected: String,
        actual: String,
    },

    #[error("{what} is singular or ill-conditioned (reciprocal condition number {rcond:.3e})")]
    Singular { what: String, rcond: f64 },

    #[error("{what} is not positive semi-definite (smallest eigenvalue {min_eigenvalue:.3e})")]
    NotPsd { what: String, min_eigenvalue: f64 },

    #[error("{what} is not symmetric (max asymmetry {asymmetry:.3e})")]
    NotSymmetric { what: String, asymmetry: f64 },

    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error("missing data block: {0}")]
    MissingBlock(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn dim(context: impl Into<String>, expected: impl ToString, actual: impl ToString) -> Self {
        Error::Dimension {
            context: context.into(),
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    pub(crate) fn param(name: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name: name.into(),
            reason: reason.into(),
        }
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
