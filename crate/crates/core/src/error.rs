use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model: {0}")]
    Model(String),

    #[error("argument out of range: {0}")]
    OutOfRange(String),

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("time step {dt:e} violates the CFL bound {max_dt:e}")]
    CflViolation { dt: f64, max_dt: f64 },

    #[error("non-finite value in cell {index} at t = {time}")]
    NonFinite { time: f64, index: usize },

    #[error("graded tree invariant violated: {0}")]
    Gradedness(String),

    #[error("incompatible grids: {0}")]
    Grid(String),

    #[error("snapshot time mismatch: {left} vs {right}")]
    TimeMismatch { left: f64, right: f64 },

    #[error("undefined tolerance: {0}")]
    Tolerance(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by user input rather than the numerics.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_) | Error::Model(_) | Error::OutOfRange(_))
    }
}
