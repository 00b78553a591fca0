use hsic::HsicError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Library(#[from] HsicError),
    /// Malformed input file; the message carries the path and line.
    #[error("{0}")]
    Parse(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    pub fn category(&self) -> &'static str {
        match self {
            CliError::Library(e) => e.category(),
            CliError::Parse(_) => "parse",
            CliError::Io(_) => "io",
            CliError::Usage(_) => "usage",
        }
    }

    /// Process exit status; never 0.
    pub fn exit_code(&self) -> i32 {
        match self.category() {
            "usage" => 2,
            "input" => 3,
            "degenerate" => 4,
            "unsupported-kernel" => 5,
            "config" => 6,
            "numerical" => 7,
            "parse" => 8,
            _ => 9,
        }
    }

    /// One-line JSON object for stderr.
    pub fn to_json(&self) -> String {
        serde_json::json!({ "error": self.category(), "message": self.to_string() }).to_string()
    }
}

pub(crate) fn config_error(msg: impl Into<String>) -> CliError {
    CliError::Library(HsicError::Config(msg.into()))
}

pub type CliResult<T> = std::result::Result<T, CliError>;
