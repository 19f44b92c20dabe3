use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Malformed {
        path: String,
        line: usize,
        message: String,
    },
    #[error("embedding table: {0}")]
    Embedding(String),
    #[error("predictable filter needs at least one scorer")]
    NoScorers,
    #[error("corpus exhausted: no window of {len} words plus a target")]
    CorpusExhausted { len: usize },
    #[error(transparent)]
    Engine(#[from] memlens_engine::EngineError),
    #[error("{0}")]
    Invalid(String),
}

impl DatasetError {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        DatasetError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, DatasetError>;
