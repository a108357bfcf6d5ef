use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("state outside the extended simplex: {0}")]
    OutsideExtendedSimplex(String),

    #[error("state is not on the simplex: shares sum to {0}")]
    NotOnSimplex(f64),

    #[error("strategy index {index} out of range for {n} strategies")]
    IndexOutOfRange { index: usize, n: usize },

    #[error("NE set unknown for this game; use the NE residual instead")]
    NeSetUnknown,

    #[error("delta must lie strictly inside (0, 1/2), got {0}")]
    InvalidDelta(f64),

    #[error("revision rate must be positive, got {0}")]
    NonPositiveRate(f64),

    #[error("invalid delay matrix: {0}")]
    InvalidDelays(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("numeric anomaly: {0}")]
    NumericAnomaly(String),

    #[error("non-finite state produced at t = {t}; last finite state at t = {last_good}")]
    NonFinite { t: f64, last_good: f64 },

    #[error("mismatched trace and update log: {0}")]
    TraceMismatch(String),

    #[error("empty trace")]
    EmptyTrace,

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
