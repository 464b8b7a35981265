use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("attribute index {index} out of range for feature dimension {dim}")]
    AttributeOutOfRange { index: usize, dim: usize },

    #[error("individual id {id} out of range for population of size {n}")]
    IdOutOfRange { id: usize, n: usize },

    #[error("value {0} lies outside [0, 1]")]
    OutOfUnitInterval(f64),

    #[error("operation requires a non-empty set")]
    EmptySet,

    #[error("set {index} has density {density:.6} below the declared floor {gamma}")]
    DensityFloor { index: usize, density: f64, gamma: f64 },

    #[error("query window {window} is below the oracle minimum {min}")]
    WindowBelowMinimum { window: f64, min: f64 },

    #[error("no labeled sample falls inside the queried set")]
    EmptyIntersection,

    #[error("privacy budget exhausted: {0}")]
    BudgetExhausted(String),

    #[error("private oracle needs at least {required} samples for its accuracy target, store has {have}")]
    InsufficientSample { required: u64, have: u64 },

    #[error("update guard tripped: {updates} updates exceeds limit {limit:.0}")]
    GuardTripped { updates: usize, limit: f64 },

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("schema mismatch: {0}")]
    Schema(String),

    #[error("malformed input: {0}")]
    Malformed(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
