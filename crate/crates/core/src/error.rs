use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("device id {id} out of range for {n} devices")]
    DeviceOutOfRange { id: usize, n: usize },

    #[error("round {got} out of order (expected {expected})")]
    RoundOutOfOrder { expected: usize, got: usize },

    #[error("round 1 requires every device to be active; missing device {device}")]
    IncompleteFirstRound { device: usize },

    #[error("trace exhausted at round {round}")]
    EndOfTrace { round: usize },

    #[error("iterate diverged at round {round}")]
    Diverged { round: usize },

    #[error("instance has no certified optimum")]
    NoCertifiedOptimum,

    #[error("averaged iterate has no observations")]
    EmptyAverage,

    #[error("need at least {needed} {what}, got {got}")]
    NotEnoughData {
        what: &'static str,
        needed: usize,
        got: usize,
    },

    #[error("trace parse error on line {line}: {reason}")]
    TraceParse { line: usize, reason: String },

    #[error("config error at `{key}`: {reason}")]
    Config { key: String, reason: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
