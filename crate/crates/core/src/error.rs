use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: {0}")]
    Schema(String),

    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        /// 1-based data row (the header is not counted).
        row: usize,
        column: String,
        message: String,
    },

    #[error("table has no data rows")]
    EmptyTable,

    #[error("fit error: {0}")]
    Fit(String),

    #[error("lookup error: {0}")]
    Lookup(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("treatment arm missing: {0}")]
    ArmMissing(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Data and fit failures, as opposed to caller misuse.
    pub fn is_data_error(&self) -> bool {
        !matches!(self, Error::Argument(_))
    }
}
