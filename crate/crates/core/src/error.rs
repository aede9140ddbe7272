use std::fmt;

/// Errors raised across the toolkit.
///
/// The variants map onto the CLI exit-code classes: `Parse` and
/// `Validation` are input problems, `Training` is a runtime failure, `Io`
/// covers the filesystem.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("validation error: {0}")]
    Validation(String),
    #[error("training error{}: {message}", BatchSuffix(*batch))]
    Training { batch: Option<usize>, message: String },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

struct BatchSuffix(Option<usize>);

impl fmt::Display for BatchSuffix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            Some(b) => write!(f, " (batch {b})"),
            None => Ok(()),
        }
    }
}

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: msg.into(),
        }
    }

    pub(crate) fn training(msg: impl Into<String>) -> Self {
        Error::Training {
            batch: None,
            message: msg.into(),
        }
    }

    /// Attaches a batch index to a training error that does not carry one yet.
    pub fn at_batch(self, index: usize) -> Self {
        match self {
            Error::Training {
                batch: None,
                message,
            } => Error::Training {
                batch: Some(index),
                message,
            },
            other => other,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
