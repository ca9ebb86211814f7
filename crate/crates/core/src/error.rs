use std::io;
use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("numeric overflow in {matrix}{}", step.map(|s| format!(" at step {s}")).unwrap_or_default())]
    NumericOverflow {
        matrix: &'static str,
        step: Option<u64>,
    },

    #[error("run diverged at step {step}: objective {objective} exceeded 10x its initial value {initial}")]
    Diverged {
        step: u64,
        objective: f64,
        initial: f64,
    },

    #[error("{path}: format error at byte offset {offset}: {message}")]
    Format {
        path: PathBuf,
        offset: u64,
        message: String,
    },

    #[error("decoupled step requires the R matrix to be present")]
    MissingR,

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("targets are not one-hot (column {0})")]
    NotOneHot(usize),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(
        path: impl Into<PathBuf>,
        offset: u64,
        message: impl Into<String>,
    ) -> Self {
        Error::Format {
            path: path.into(),
            offset,
            message: message.into(),
        }
    }
}
