use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Input rejected before any computation ran.
    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    /// A matrix that must be inverted is numerically singular.
    #[error("singular system ({what}): condition estimate {condition:.3e}")]
    Singular { what: String, condition: f64 },

    /// Parameters left the configured norm bound during a loop run.
    #[error("divergence at iteration {iteration}: parameter norm {norm:.3e} exceeds {bound:.3e}")]
    Divergence {
        iteration: usize,
        norm: f64,
        bound: f64,
    },

    #[error("undefined quantity: {0}")]
    Undefined(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    /// True for singularity and divergence, the two numerical failure classes.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Singular { .. } | Error::Divergence { .. })
    }
}
