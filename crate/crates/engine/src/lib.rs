//! CPU inference engine for decoder-only transformers with residual-stream
//! tracing and feed-forward sub-update interventions.
//!
//! The crate loads a model directory (config.json, model.safetensors,
//! vocab.json, merges.txt), runs deterministic forward passes, projects
//! intermediate states through the tied embedding, and can zero selected
//! feed-forward sub-updates over a layer range during inference.

pub mod config;
pub mod error;
pub mod intervention;
pub mod lens;
pub mod model;
pub mod safetensors;
pub mod tensor;
pub mod tokenizer;
pub mod weights;

pub use config::{Activation, ModelConfig};
pub use error::{EngineError, Result};
pub use intervention::{
    dominance_scores, run_intervention, sweep_ranges, ExampleOutcome, InterventionExample,
    InterventionResult, InterventionSpec, PositionScope, ZeroMode, DEFAULT_K,
};
pub use lens::{
    aggregate_curves, argmax, intervention_examples, probe_example, probe_items, project_lens,
    rank_of, split_memorized, target_first_token, LayerCurve, LensRecord, ProbeItem, SetLabel,
};
pub use model::{Model, Trace, TraceBuffer};
pub use tokenizer::Tokenizer;
pub use weights::WeightSet;
