use std::path::PathBuf;

use asrrl_core::agent::{AgentError, CheckpointError};
use asrrl_core::env::EnvError;
use asrrl_core::DomainError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} already exists (pass --force to overwrite)")]
    Exists { path: PathBuf },
    #[error("{path}:{line}: {message}")]
    Corpus {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("training diverged: {0}")]
    Divergence(String),
    #[error(transparent)]
    Agent(AgentError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error("fine-tune gradient is not finite in coordinate {coordinate} at step {step}")]
    NonFiniteGradient { coordinate: usize, step: usize },
}

impl From<AgentError> for HarnessError {
    fn from(e: AgentError) -> Self {
        match e {
            AgentError::NonFiniteOutput { .. } | AgentError::NonFiniteGradient { .. } => {
                HarnessError::Divergence(e.to_string())
            }
            other => HarnessError::Agent(other),
        }
    }
}

impl HarnessError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 2 configuration, 3 divergence, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Divergence(_) | HarnessError::NonFiniteGradient { .. } => 3,
            HarnessError::Io { .. } | HarnessError::Exists { .. } | HarnessError::Csv(_) => 4,
            HarnessError::Checkpoint(CheckpointError::Io(_)) => 4,
            HarnessError::Corpus { .. } | HarnessError::Checkpoint(_) => 4,
            HarnessError::Config(_)
            | HarnessError::Agent(_)
            | HarnessError::Env(_)
            | HarnessError::Domain(_) => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;
