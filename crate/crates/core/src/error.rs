use thiserror::Error;

/// Errors raised by the numerical laboratory.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("unsupported feature: {0}")]
    Unsupported(String),

    #[error("resource budget exceeded: {what} needs dimension {dim}, limit is {limit}")]
    Budget {
        what: String,
        dim: usize,
        limit: usize,
    },

    #[error("{what} did not converge (achieved {achieved:.3e}, target {target:.3e})")]
    Convergence {
        what: String,
        achieved: f64,
        target: f64,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("cache format version {found} is not supported (expected {expected}); delete the file to rebuild")]
    CacheVersion { found: u32, expected: u32 },

    #[error("cache corrupted: {0}")]
    CacheCorrupt(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for the CLI: 2 config, 3 budget, 4 numerical, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Invalid(_) => 2,
            Error::Budget { .. } => 3,
            Error::Convergence { .. } | Error::Numerical(_) | Error::Domain(_) => 4,
            _ => 1,
        }
    }
}
