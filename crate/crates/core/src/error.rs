use thiserror::Error;

/// Errors raised anywhere in the laboratory.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("regime error: {0}")]
    Regime(String),

    #[error("non-finite state at t = {t}: {what}")]
    Integrity { t: f64, what: String },

    #[error("positivity lost at t = {t}: min rho = {min_rho:e}")]
    Positivity { t: f64, min_rho: f64 },

    #[error("time step {dt:e} violates the stability bound; admissible dt <= {admissible:e}")]
    StepSize { dt: f64, admissible: f64 },

    #[error("smallness condition violated: {0}")]
    Smallness(String),

    #[error("degenerate data: {0}")]
    Degenerate(String),

    #[error("config error at {location}: {message}")]
    Config { location: String, message: String },

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl Error {
    /// True for failures caused by the numerical state rather than the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Integrity { .. } | Error::Positivity { .. } | Error::StepSize { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
