use thiserror::Error;

/// Failure categories shared by every estimator and test procedure.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum HsicError {
    /// Malformed or inconsistent input (shape mismatch, too few rows, non-finite values).
    #[error("invalid input: {0}")]
    Input(String),
    /// Input that is well formed but makes the requested quantity undefined.
    #[error("degenerate input: {0}")]
    Degenerate(String),
    /// The requested kernel cannot be used with this construction.
    #[error("unsupported kernel: {0}")]
    UnsupportedKernel(String),
    /// Inconsistent or out-of-range configuration.
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl HsicError {
    /// Short machine-readable category name.
    pub fn category(&self) -> &'static str {
        match self {
            HsicError::Input(_) => "input",
            HsicError::Degenerate(_) => "degenerate",
            HsicError::UnsupportedKernel(_) => "unsupported-kernel",
            HsicError::Config(_) => "config",
            HsicError::Numerical(_) => "numerical",
        }
    }
}

pub type Result<T> = std::result::Result<T, HsicError>;

pub(crate) fn input<T>(msg: impl Into<String>) -> Result<T> {
    Err(HsicError::Input(msg.into()))
}

pub(crate) fn degenerate<T>(msg: impl Into<String>) -> Result<T> {
    Err(HsicError::Degenerate(msg.into()))
}

pub(crate) fn config<T>(msg: impl Into<String>) -> Result<T> {
    Err(HsicError::Config(msg.into()))
}
