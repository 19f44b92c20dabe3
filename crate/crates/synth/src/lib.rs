pub mod gpt2;
pub mod rng;
pub mod data;
pub mod words;
pub mod bpe;
pub mod memorizer;
