use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    /// A non-finite value showed up during training or evaluation.
    #[error("numerical error{}: {message}", location(.epoch, .layer))]
    Numerical {
        message: String,
        epoch: Option<usize>,
        layer: Option<usize>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
}

fn location(epoch: &Option<usize>, layer: &Option<usize>) -> String {
    match (epoch, layer) {
        (Some(e), Some(l)) => format!(" in epoch {e}, layer {l}"),
        (Some(e), None) => format!(" in epoch {e}"),
        (None, Some(l)) => format!(" in layer {l}"),
        (None, None) => String::new(),
    }
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Attach the epoch to a numerical error raised below the training loop.
    pub(crate) fn in_epoch(self, epoch: usize) -> Self {
        match self {
            Error::Numerical { message, layer, .. } => Error::Numerical {
                message,
                epoch: Some(epoch),
                layer,
            },
            other => other,
        }
    }
}
