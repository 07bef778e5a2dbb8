use std::path::PathBuf;

use thiserror::Error;

use crate::mdp::ValidationReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid MDP:\n{0}")]
    InvalidMdp(ValidationReport),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid policy: {0}")]
    InvalidPolicy(String),

    #[error("invalid uncertainty spec: {0}")]
    InvalidSpec(String),

    #[error("unknown uncertainty flavor `{0}`")]
    UnknownFlavor(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{0}")]
    Unsupported(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("csv export to {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

impl Error {
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    /// True for errors caused by malformed inputs rather than runtime failures.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidMdp(_)
                | Error::Dimension(_)
                | Error::InvalidPolicy(_)
                | Error::InvalidSpec(_)
                | Error::UnknownFlavor(_)
                | Error::InvalidConfig(_)
                | Error::Json { .. }
        )
    }
}
