//! Compression and bias-audit toolkit for small transformer translation models.
//!
//! The crate covers the whole audit loop: a binary weight store, magnitude
//! pruning and int8 post-training quantization, a tiny encoder-decoder that
//! exposes averaged cross-attention, and the metric suite (ChrF/BLEU, ChrF
//! deltas, off-target rates, attention variance, gender fairness, word-sense
//! bias) plus the report builder that groups everything by resource level.

pub mod attention_alignment;
pub mod compression;
pub mod corpus_resources;
pub mod error;
pub mod gender_fairness;
pub mod jsonl;
pub mod lang_id;
pub mod reporting;
pub mod sense_bias;
pub mod synth;
pub mod tensor_store;
pub mod text_metrics;
pub mod toy_transformer;

pub use error::{Error, Result};
