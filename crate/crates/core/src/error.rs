use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("self-loop on node {node} (line {line})")]
    SelfLoop { node: usize, line: usize },

    #[error("node {0} is isolated (degree 0); pass --self-loop-isolated to add unit self-loops")]
    IsolatedNode(usize),

    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(
        "sparse power A^{order} needs {nnz} non-zeros, above the budget of {budget}; \
         enable the dense fallback for this graph"
    )]
    FillInBudget {
        order: usize,
        nnz: usize,
        budget: usize,
    },

    #[error("node {0} is adjacent to every other node; no negatives available")]
    NoNegativesAvailable(usize),

    #[error("metric {0} is undefined for these pair counts")]
    UndefinedMetric(&'static str),

    #[error("modularity is undefined for a graph without edges")]
    Edgeless,

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("eigendecomposition failed: {0}")]
    Decomposition(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

/// Tags an error with the pipeline stage it came from.
pub trait StageContext<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageContext<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| Error::Stage {
            stage,
            source: Box::new(e),
        })
    }
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
