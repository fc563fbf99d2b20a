use thiserror::Error;

/// Errors produced by model construction, fitting, simulation and I/O.
#[derive(Error, Debug)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid data at index {index}: {reason}")]
    InvalidData { index: usize, reason: String },

    #[error("AUC is undefined: truth labels contain a single class")]
    UndefinedAuc,

    #[error("all {n_starts} starts failed: {diagnostics:?}")]
    AllStartsFailed {
        n_starts: usize,
        diagnostics: Vec<String>,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// True for errors caused by bad user input rather than runtime failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidArgument(_)
                | Error::InvalidData { .. }
                | Error::UndefinedAuc
                | Error::Config(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
