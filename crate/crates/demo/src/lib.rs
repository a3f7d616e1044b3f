//! Browser demo over the core crate. The page in `www/` drives three
//! operations: a positional-encoding heatmap, a visual-fusion explorer and a
//! live training curve on synthetic data.

pub mod ops;

#[cfg(target_arch = "wasm32")]
mod web;
