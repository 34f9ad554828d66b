use thiserror::Error;

#[derive(Debug, Error)]
pub enum SdrError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Overflow or NaN during optimization; `block` names the parameter block
    /// (`directions`, `offsets`, `coefficients`) or `objective`.
    #[error("non-finite {quantity} in parameter block `{block}` at inner step {step}")]
    NonFinite {
        block: &'static str,
        quantity: &'static str,
        step: usize,
    },

    #[error("outer iteration {iteration}: {source}")]
    Iteration {
        iteration: usize,
        #[source]
        source: Box<SdrError>,
    },

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl SdrError {
    /// True for failures caused by floating-point breakdown rather than bad input.
    pub fn is_numerical(&self) -> bool {
        match self {
            SdrError::NonFinite { .. } => true,
            SdrError::Iteration { source, .. } => source.is_numerical(),
            _ => false,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        SdrError::InvalidArgument(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, SdrError>;
