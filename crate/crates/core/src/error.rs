use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid config: `{field}` {reason}")]
    InvalidConfig { field: &'static str, reason: String },

    #[error("config parse error: {0}")]
    ConfigParse(String),

    #[error("distance {distance} m is not above the reference distance {d0} m")]
    DistanceBelowReference { distance: f64, d0: f64 },

    #[error("coincident elements: zero propagation distance between {0}")]
    CoincidentElements(String),

    #[error("correlation factorization failed: {0}")]
    Factorization(String),

    #[error("infeasible association: {0}")]
    InfeasibleAssociation(String),

    #[error("insufficient antennas: {antennas} antennas cannot cover {users} users")]
    InsufficientAntennas { antennas: usize, users: usize },

    #[error("instance too large for exhaustive search: {0} candidate matrices")]
    InstanceTooLarge(f64),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite gradient in {0}")]
    NonFiniteGradient(&'static str),

    #[error("malformed {what}: {reason}")]
    Format { what: &'static str, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn config(field: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidConfig { field, reason: reason.into() }
    }
}
