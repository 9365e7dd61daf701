use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Caller supplied something outside the operation's domain.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Sample window does not line up with an integer number of periods.
    #[error("sample window mismatch: {0}")]
    Window(String),

    /// Two coefficient sets that must share a frequency grid do not.
    #[error("harmonic mismatch: {0}")]
    HarmonicMismatch(String),

    /// The simulated state left the finite / bounded region.
    #[error("plant state diverged at t = {t:.6} s (x = {x:e})")]
    Diverged { t: f64, x: f64 },

    #[error("Newton iteration failed after {iterations} iterations (residual {residual:e})")]
    NewtonFailed { iterations: usize, residual: f64 },

    /// Analysis of a curve found a structure the model should not produce.
    #[error("unexpected curve structure: {0}")]
    Structure(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidInput(msg.into()))
}
