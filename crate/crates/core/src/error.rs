use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the distributed kriging pipeline.
#[derive(Debug, Error)]
pub enum DiskError {
    /// Caller supplied something outside an operation's preconditions.
    #[error("invalid input: {0}")]
    Input(String),

    /// A factorization or other numerical step failed even after jitter.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// A subset chain could not make progress.
    #[error("chain{} aborted: {reason}", subset.map(|s| format!(" for subset {s}")).unwrap_or_default())]
    ChainAbort { subset: Option<usize>, reason: String },

    /// Malformed text in one of the on-disk formats.
    #[error("{context}:{line}: {message}")]
    Parse {
        context: String,
        line: usize,
        message: String,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, DiskError>;

impl DiskError {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        DiskError::Input(msg.into())
    }

    pub(crate) fn numerical(msg: impl Into<String>) -> Self {
        DiskError::Numerical(msg.into())
    }

    pub(crate) fn parse(context: &str, line: usize, message: impl Into<String>) -> Self {
        DiskError::Parse {
            context: context.to_string(),
            line,
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DiskError::Io {
            path: path.into(),
            source,
        }
    }

    /// Attach a subset id to a chain abort raised inside a worker.
    pub fn with_subset(self, id: usize) -> Self {
        match self {
            DiskError::ChainAbort { reason, .. } => DiskError::ChainAbort {
                subset: Some(id),
                reason,
            },
            other => other,
        }
    }
}
