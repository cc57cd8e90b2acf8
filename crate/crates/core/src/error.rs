use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("time {t} outside [0, {horizon}]")]
    OutOfRange { t: f64, horizon: f64 },

    #[error("time {0} is not a grid knot")]
    NotAKnot(f64),

    #[error("invalid process specification: {0}")]
    Invalid(String),

    #[error("block [{a}, {b}] did not reach tolerance {tol:e} (estimate {estimate:e}) at {substeps} substeps")]
    NonConvergent {
        a: f64,
        b: f64,
        tol: f64,
        estimate: f64,
        substeps: usize,
    },

    #[error("processes are not on a common time grid")]
    GridMismatch,

    #[error("jump epochs differ between the two processes")]
    EpochMismatch,

    #[error("initial laws differ (max gap {0:e})")]
    InitialLawMismatch(f64),

    #[error("scenario error at {pointer}: {message}")]
    Schema { pointer: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
