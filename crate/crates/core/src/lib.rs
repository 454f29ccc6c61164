//! Probing classifiers over per-layer LLM hidden states for hallucination
//! detection.
//!
//! A probe runs one shared, dimension-halving MLP over every layer's hidden
//! state, compares the per-layer encodings (norms, distances, cosine
//! similarity, ...) and aggregates the result into logits. The crate also
//! ships the single-layer / stacked / ensemble baselines, IO/BIO/BIOES
//! tagging with greedy or CRF decoding, an Adam trainer with early stopping
//! and two-stage transfer, the metric suite and the experiment drivers.

pub mod baselines;
pub mod dump;
pub mod error;
pub mod experiments;
pub mod metrics;
pub mod model;
pub mod probe;
pub mod synthetic;
pub mod tagging;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
