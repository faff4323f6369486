use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("class {class} has no positive samples")]
    DegenerateClass { class: usize },

    #[error("margin undefined for class {class}: n_k = N = {count}")]
    MarginUndefined { class: usize, count: usize },

    #[error("generated dataset misses prevalence targets: {0}")]
    Feasibility(String),

    #[error("ingestion error: {0}")]
    Ingestion(String),

    #[error("parse error in {file} at row {row}: {message}")]
    Parse {
        file: String,
        row: usize,
        message: String,
    },

    #[error("AUC undefined: labels contain a single class")]
    UndefinedAuc,

    #[error("bootstrap unstable: {undefined} of {replications} replicates undefined")]
    UnstableCi {
        undefined: usize,
        replications: usize,
    },

    #[error("unsupported architecture: {0}")]
    UnsupportedArchitecture(String),

    #[error("training diverged at epoch {epoch}, step {step}: loss = {value}")]
    Divergence { epoch: usize, step: usize, value: f64 },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the CLI: 3 for numerical divergence, 2 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Divergence { .. } => 3,
            _ => 2,
        }
    }
}
