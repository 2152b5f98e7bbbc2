//! Prompt-aware two-stage text-video retrieval over precomputed embeddings.
//!
//! Stage 1 prunes the corpus with a distilled lightweight video embedding;
//! stage 2 scores the surviving candidates by selecting query-relevant frames
//! and aggregating their teacher features.

pub mod aggregator;
pub mod autodiff;
pub mod corpus;
pub mod engine;
pub mod error;
pub mod layers;
pub mod model;
pub mod pruner;
pub mod prompt;
pub mod rng;
pub mod sampler;
pub mod temporal;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use tensor::Mat;
