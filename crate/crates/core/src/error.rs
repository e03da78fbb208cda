use thiserror::Error;

use crate::architectures::ModelError;
use crate::nn::NnError;
use crate::preprocess::PreprocessError;
use crate::signal_io::SignalError;
use crate::tfr::TfrError;
use crate::train_eval::TrainError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Process exit status reported by the command-line front end.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitCode {
    Success = 0,
    Validation = 2,
    Divergence = 3,
    Io = 4,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error(transparent)]
    Tfr(#[from] TfrError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("config: {0}")]
    Config(String),
    #[error("feature config hash {found} does not match expected {expected}")]
    ConfigMismatch { expected: String, found: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Format(String),
}

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub fn exit_code(&self) -> ExitCode {
        match self {
            Error::Io { .. } => ExitCode::Io,
            Error::Signal(SignalError::Io { .. }) => ExitCode::Io,
            Error::Train(TrainError::DivergedLoss { .. }) => ExitCode::Divergence,
            _ => ExitCode::Validation,
        }
    }
}
