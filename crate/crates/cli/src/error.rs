use std::path::Path;

/// Pipeline failures, grouped by the exit code they produce.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// The config file is unreadable, malformed or out of range.
    #[error("config error: {0}")]
    Config(String),
    /// Inputs on disk are missing, malformed or inconsistent.
    #[error("validation error: {0}")]
    Validation(String),
    #[error("runtime error: {0}")]
    Runtime(String),
    #[error("I/O error: {0}")]
    Io(String),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Validation(_) => 2,
            CliError::Runtime(_) => 3,
            CliError::Io(_) => 4,
        }
    }

    /// Wraps a library error, prefixing `context` (an arm or file name).
    pub fn from_lib(context: &str, e: ultr_lab::Error) -> Self {
        use ultr_lab::Error as E;
        let msg = format!("{context}: {e}");
        match e {
            E::Parse { .. } | E::Validation(_) => CliError::Validation(msg),
            E::Training { .. } | E::Checkpoint(_) => CliError::Runtime(msg),
            E::Io(_) => CliError::Io(msg),
        }
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Io(format!("{}: {e}", path.display()))
    }
}
