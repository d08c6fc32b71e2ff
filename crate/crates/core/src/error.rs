use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("sigma is singular or ill-conditioned (condition number {condition:e})")]
    SingularSigma { condition: f64 },

    #[error("degenerate model: {0}")]
    DegenerateModel(String),

    #[error("Hörmander constant is zero; the bracket condition fails")]
    ZeroLambda,

    #[error("Q_T is singular or ill-conditioned (condition number {condition:e})")]
    SingularQ { condition: f64 },

    #[error("eigensolver failed: {0}")]
    Eigen(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("control optimizer failed to connect the endpoints (residual {residual:e})")]
    FailedToConnect { residual: f64 },

    #[error("function must be strictly positive: {0}")]
    NonPositiveFunction(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
