use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("label column `{0}` not found in header")]
    MissingLabelColumn(String),

    #[error("row {row}: expected {expected} fields, found {found}")]
    Arity {
        row: usize,
        expected: usize,
        found: usize,
    },

    #[error("duplicate column name `{0}` after canonicalization")]
    DuplicateColumn(String),

    #[error("empty after cleaning")]
    EmptyAfterCleaning,

    #[error("label {label} out of range for {n_classes} classes")]
    LabelOutOfRange { label: usize, n_classes: usize },

    #[error("stratification impossible: class `{0}` has fewer than 2 rows")]
    Stratification(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    /// True for errors caused by the input data rather than the caller.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Csv(_)
                | Error::MissingLabelColumn(_)
                | Error::Arity { .. }
                | Error::DuplicateColumn(_)
                | Error::EmptyAfterCleaning
                | Error::LabelOutOfRange { .. }
                | Error::Stratification(_)
        )
    }
}
