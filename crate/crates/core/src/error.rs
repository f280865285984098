use thiserror::Error;

use crate::backend::BackendError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Backend(#[from] BackendError),

    #[error("unparseable chain: {0}")]
    UnparseableChain(String),

    #[error("perplexity of an empty logprob sequence is undefined")]
    EmptyLogprobs,

    #[error("graph is not a DAG")]
    NotADag,

    #[error("graph has no answer nodes")]
    NoAnswerNodes,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub fn is_backend(&self) -> bool {
        matches!(self, Error::Backend(_))
    }
}
