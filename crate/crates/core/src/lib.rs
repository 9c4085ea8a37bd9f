//! Latent-space Bayesian optimization over variable-length token embeddings.
//!
//! Texts are embedded token by token, pooled with a position-aware
//! aggregation, and scored by a deep-kernel Gaussian process. Candidates come
//! from multiplicative perturbations of observed embeddings, are ranked by a
//! lower confidence bound, decoded back to text through a codec, and scored
//! by a black-box objective.

pub mod aggregation;
pub mod campaign;
pub mod codec;
pub mod config;
pub mod dataset;
pub mod error;
pub mod explorer;
pub mod oracle;
pub mod report;
pub mod rng;
pub mod selftest;
pub mod similarity;
pub mod stats;
pub mod surrogate;
pub mod types;

pub use error::{Error, Result};
