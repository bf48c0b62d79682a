use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid depth {depth} mm ({context})")]
    InvalidDepth { depth: f64, context: String },

    #[error("point is behind the camera (z = {0})")]
    BehindCamera(f64),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite value {value} in objective term `{term}`")]
    NonFinite { term: String, value: f64 },

    #[error("solver diverged at step {step}: objective {value:e}, dominated by term `{term}`")]
    Divergence {
        step: usize,
        value: f64,
        term: String,
    },

    #[error("scene generation failed: {0}")]
    Generation(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// True for errors raised by numerical evaluation rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::NonFinite { .. } | Error::Divergence { .. })
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
