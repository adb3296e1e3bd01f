//! Soft-prompt tuning over a small frozen transformer encoder.
//!
//! The crate bundles a reverse-mode autodiff tape, a pretrainable encoder
//! backbone, four prompt parameterizations (free prompts, superposed
//! sampled embeddings, softmax mixtures, a residual MLP), AdamW with
//! per-group decay, synthetic tasks, metrics, and an experiment harness.

pub mod autodiff;
pub mod backbone;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod optim;
pub mod reparam;
pub mod tasks;
pub mod vocab;

pub use error::{Error, Result};
