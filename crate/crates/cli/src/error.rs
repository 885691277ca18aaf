use std::path::PathBuf;

use tendon_finger::datagen::DatagenError;
use tendon_finger::gpr::{CorpusError, GprError};
use tendon_finger::harness::HarnessError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {message}")]
    Config { path: PathBuf, message: String },
    #[error("{0}")]
    Invalid(String),
    #[error("{0}")]
    Numerical(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config { .. } | CliError::Invalid(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Io { .. } => 4,
        }
    }

    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }
}

impl From<DatagenError> for CliError {
    fn from(e: DatagenError) -> Self {
        match e {
            DatagenError::InvalidProtocol(_) => CliError::Invalid(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<GprError> for CliError {
    fn from(e: GprError) -> Self {
        match e {
            GprError::NotEnoughData { .. }
            | GprError::InvalidSample { .. }
            | GprError::DimensionMismatch { .. }
            | GprError::InvalidHyperparams(_)
            | GprError::Format(_) => CliError::Invalid(e.to_string()),
            GprError::Io(source) => CliError::Io { path: PathBuf::new(), source },
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::InvalidSettings(_) | HarnessError::EmptyCorpus { .. } | HarnessError::Trace(_) => {
                CliError::Invalid(e.to_string())
            }
            HarnessError::Io(source) => CliError::Io { path: PathBuf::new(), source },
            HarnessError::Gpr { ref source, .. } if matches!(source, GprError::NotEnoughData { .. }) => {
                CliError::Invalid(e.to_string())
            }
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

pub fn corpus_error(path: &std::path::Path, e: CorpusError) -> CliError {
    match e {
        CorpusError::Io(source) => CliError::Io { path: path.into(), source },
        other => CliError::Invalid(format!("{}: {other}", path.display())),
    }
}
