use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain where the quantity is defined.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("time {time} is not a node of the grid (N = {n}, T = {horizon})")]
    OffGrid { time: f64, n: usize, horizon: f64 },

    /// A numerical routine did not reach its target accuracy.
    #[error("{what}: tolerance {tolerance:e} not reached, achieved residual {residual:e}")]
    Tolerance {
        what: String,
        tolerance: f64,
        residual: f64,
    },

    #[error("matrix is not positive definite after jitter ({0})")]
    NotPositiveDefinite(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("integral diverges: {0}")]
    Divergent(String),

    #[error("fingerprint mismatch: expected {expected}, found {found}")]
    FingerprintMismatch { expected: String, found: String },

    #[error("invalid configuration:\n  - {}", .0.join("\n  - "))]
    Validation(Vec<String>),

    #[error("run directory {0} is sealed")]
    Sealed(String),

    #[error("{0}")]
    Internal(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("config parse error: {0}")]
    Config(#[from] toml::de::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    /// Process exit code used by the command line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Validation(_) | Error::Config(_) | Error::Domain(_) | Error::OffGrid { .. } => 1,
            Error::Tolerance { .. } | Error::NotPositiveDefinite(_) | Error::Divergent(_) => 2,
            _ => 3,
        }
    }
}
