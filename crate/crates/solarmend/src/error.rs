use thiserror::Error;

/// Errors produced by the imputation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor or matrix dimensions do not line up.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A forward operation produced NaN or infinity.
    #[error("non-finite value in {op}: {detail}")]
    NonFinite { op: &'static str, detail: String },

    /// An argument violated a documented precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Raw fleet data could not be ingested.
    #[error("ingest: {0}")]
    Ingest(String),

    /// An imputer could not complete.
    #[error("imputation: {0}")]
    Imputation(String),

    /// Training aborted (diverging loss, NaN gradient).
    #[error("training: {0}")]
    Training(String),

    /// A checkpoint could not be written or read back.
    #[error("checkpoint: {0}")]
    Checkpoint(String),

    /// Scoring preconditions not met (empty scoring set, length mismatch).
    #[error("evaluation: {0}")]
    Evaluation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
