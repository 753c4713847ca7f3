//! Training-free test-time adaptation for zero-shot skeleton action
//! classifiers.
//!
//! A frozen backbone produces a feature tensor and zero-shot logits for each
//! test sequence. This crate pools the features into global, body-part and
//! temporal-phase descriptors, keeps the most confident descriptors per
//! predicted class in a bounded cache, retrieves class evidence by cosine
//! affinity, fuses the per-descriptor evidence with class-specific prior
//! weights and adds the result back onto the zero-shot logits.
//!
//! Module map:
//! - [`tensorio`]: feature/sample data model, the `SKC1` stream container and
//!   a seeded synthetic stream generator.
//! - [`descriptors`]: partition schemes and descriptor pooling.
//! - [`cache`]: the class-blocked, entropy-gated cache and its `SKCC` snapshots.
//! - [`retrieval`]: affinities and descriptor-wise class logits.
//! - [`priors`]: prompt construction, response parsing, prior weights and the
//!   chat-completion client.
//! - [`fusion`]: entropy, weighted fusion and logit enhancement.
//! - [`harness`]: the streaming engine, metrics, sweeps, latency bench and
//!   report files.

pub mod cache;
pub mod descriptors;
mod error;
pub mod fusion;
pub mod harness;
pub mod priors;
pub mod retrieval;
pub mod tensorio;

pub use error::{Error, Result};
