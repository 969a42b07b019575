use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("cholesky factorization failed for every jitter from {smallest:e} to {largest:e}")]
    Cholesky { smallest: f64, largest: f64 },

    #[error("normalization did not converge after {sweeps} sweeps (max deviation {deviation:e})")]
    NormalizationDiverged { sweeps: usize, deviation: f64 },

    #[error("could not draw a nonsingular mixing matrix in {0} attempts")]
    SingularMixing(usize),

    #[error("location {row} lies outside the domain")]
    OutsideDomain { row: usize },

    #[error("column {0} has zero variance")]
    ZeroVariance(usize),

    #[error("non-finite loss in batch {batch} of epoch {epoch}")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        /// Mean ELBO of every completed epoch.
        trace: Vec<f64>,
    },

    #[error("singular linear system: {0}")]
    Singular(String),

    #[error("nonpositive composition part at row {row}, column {col}")]
    NonPositivePart { row: usize, col: usize },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
