//! Single-frame multimodal action anticipation on precomputed embeddings.
//!
//! RGB and depth frame embeddings are fused with cross-attention, the recent
//! action history is encoded from per-class text embeddings, and the two are
//! fused by a self-attention encoder before a linear classifier. The crate
//! carries its own tensor/autodiff substrate, the AdamW training loop, the
//! evaluation metrics and the binary dataset/checkpoint formats.

pub mod attention;
pub mod data;
pub mod error;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod training;

pub use error::{Error, Result};
