use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("variable {variable} has zero weighted variance in period {period}")]
    ZeroVariance { period: usize, variable: usize },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("divergence in round {round}, step {step}: {detail}")]
    Divergence {
        round: usize,
        step: usize,
        detail: String,
    },

    #[error("corrupt model file: {0}")]
    CorruptModel(String),

    #[error("unsupported model format version {found} (supported: {supported})")]
    UnsupportedVersion { found: u64, supported: u64 },

    #[error("corrupt binary matrix: {0}")]
    CorruptBinary(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures caused by the numerics rather than the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NotPositiveDefinite(_) | Error::NonFinite(_) | Error::Divergence { .. }
        )
    }
}
