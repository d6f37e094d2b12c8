use thiserror::Error;

/// Errors raised by the simulation and verification kernels.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("potential does not decay on the box: relative boundary value {ratio:e} exceeds {limit:e}")]
    PotentialNotDecayed { ratio: f64, limit: f64 },

    #[error("explicit step unstable: dt*|k_max|^2 = {value} exceeds {limit}")]
    Unstable { value: f64, limit: f64 },

    #[error("schedule does not match path: {0}")]
    ScheduleMismatch(String),

    #[error("time {time} is not on the snapshot grid")]
    OffGrid { time: f64 },

    #[error("time {time} exceeds the wrap-time guard {wrap}")]
    BeyondWrap { time: f64, wrap: f64 },

    #[error("horizon {horizon} is too short (need at least {required})")]
    HorizonTooShort { horizon: f64, required: f64 },

    #[error("partition needs more than {cap} intervals")]
    PartitionCap { cap: usize },

    #[error("path {index} failed: {message}")]
    PathFailed { index: usize, message: String },

    #[error("only {usable} usable refinement levels (need at least 3)")]
    TooFewLevels { usable: usize },

    #[error("ensemble is empty")]
    EmptyEnsemble,

    #[error("dense oracle limited to N <= {limit}, got {n}")]
    OracleTooLarge { n: usize, limit: usize },

    #[error("snapshot format: {0}")]
    Format(String),

    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
