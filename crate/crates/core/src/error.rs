use wlembed_nn::NnError;

#[derive(Debug, thiserror::Error)]
pub enum CoreError {
    #[error("parse error at row {row}, column '{column}': {message}")]
    Parse { row: usize, column: String, message: String },
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("unknown workload '{0}'")]
    UnknownWorkload(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("admission scheme cannot be satisfied for workload '{workload}': {reason}")]
    Scheme { workload: String, reason: String },
    #[error("grid has {size} configurations, above the cap of {cap}; use coarser candidate lists")]
    GridTooLarge { size: u128, cap: u128 },
    #[error("not applicable: {0}")]
    NotApplicable(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CoreError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        CoreError::Invalid(msg.into())
    }

    /// True for failures caused by diverging or non-finite training.
    pub fn is_numerical(&self) -> bool {
        matches!(self, CoreError::Numerical(_) | CoreError::Nn(NnError::NonFinite(_)))
    }
}

pub type Result<T, E = CoreError> = std::result::Result<T, E>;
