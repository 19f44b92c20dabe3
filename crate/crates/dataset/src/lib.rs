//! Dataset construction and auditing: idiom loading, the three-stage
//! filter pipeline, length-matched corpus controls, and factual cloze
//! statements.

pub mod embed;
pub mod error;
pub mod filter;
pub mod load;
pub mod types;
pub mod wiki;

pub use embed::{strip_edge_punct, WordEmbeddingTable};
pub use error::{DatasetError, Result};
pub use filter::{
    build_idiomem, default_majority, filter_length, filter_predictable, filter_similarity,
    CompletionScorer, FilterConfig, ModelScorer, Verdict,
};
pub use load::{load_facts, load_idioms};
pub use types::{FactEntry, FilterKind, FilterReport, IdiomEntry, ReportRow, Source};
pub use wiki::{load_corpus, sample_wiki_prompts, split_documents, WikiPrompt};
