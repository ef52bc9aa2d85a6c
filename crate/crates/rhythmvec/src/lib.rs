//! Speech-rhythm speaker embeddings.
//!
//! A speaker-identification model consumes phoneme/duration sequences
//! (bundle block, Transformer encoder, temporal attentive pooling, bottleneck
//! layer) and is trained with an angular prototypical loss. The bottleneck
//! embeddings condition a phoneme-duration predictor, and everything is
//! evaluated with objective metrics: EER, duration RMSE, correlation,
//! speaking rate, cosine similarity, MIC, and a 2-D principal-component
//! projection of the embedding space.
//!
//! All training and generation is seeded and single-threaded: the same
//! config and seed reproduce checkpoints and reports byte for byte.

// Index loops mirror the matrix/DP math; iterator rewrites obscure it.
#![allow(clippy::needless_range_loop)]

pub mod checkpoint;
pub mod corpus;
pub mod dur_model;
pub mod error;
pub mod experiment;
pub mod features;
pub mod metrics;
pub mod nn;
pub mod report;
pub mod rng;
pub mod spk_model;

pub use error::{Error, Result};
