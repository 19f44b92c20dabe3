//! Error types for model loading and inference.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed config: {0}")]
    Config(String),

    #[error("missing tensor `{0}` in weight container")]
    MissingTensor(String),

    #[error("tensor `{name}` has shape {actual:?}, expected {expected:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("tensor `{name}` contains a non-finite value at flat index {index}")]
    NonFinite { name: String, index: usize },

    #[error("malformed weight container: {0}")]
    Container(String),

    #[error("malformed tokenizer table: {0}")]
    Tokenizer(String),

    #[error("token id {id} out of range (vocab size {vocab_size})")]
    TokenOutOfRange { id: u32, vocab_size: usize },

    #[error("empty token sequence")]
    EmptySequence,

    #[error("sequence length {len} exceeds max positions {max_positions}")]
    SequenceTooLong { len: usize, max_positions: usize },

    #[error("layer {layer} out of range [1, {n_layers}]")]
    LayerOutOfRange { layer: usize, n_layers: usize },

    #[error("dimension mismatch: got {actual}, expected {expected}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("prompt for example `{example}` tokenizes to {len} tokens, exceeding max positions {max_positions}")]
    PromptTooLong {
        example: String,
        len: usize,
        max_positions: usize,
    },

    #[error("example `{0}` is not memorized by the model (baseline prediction differs from target)")]
    NotMemorized(String),

    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, EngineError>;

impl EngineError {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        EngineError::Io {
            path: path.into(),
            source,
        }
    }
}
