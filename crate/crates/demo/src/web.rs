use wasm_bindgen::prelude::*;

use crate::ops;

fn js(e: aag_core::Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen(js_name = positionalEncoding)]
pub fn positional_encoding(len: usize, dim: usize) -> Result<Vec<f32>, JsError> {
    ops::positional_encoding(len, dim).map_err(js)
}

/// JSON `{fused, soft_weights, maps}`.
#[wasm_bindgen]
pub fn fuse(strategy: &str, rgb: &[f32], depth: &[f32], heads: usize, seed: u32) -> Result<String, JsError> {
    let f = ops::fuse(strategy, rgb, depth, heads, seed as u64).map_err(js)?;
    serde_json::to_string(&f).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen]
pub struct ToyTrainer(ops::ToyTrainer);

#[wasm_bindgen]
impl ToyTrainer {
    #[wasm_bindgen(constructor)]
    pub fn new(rule: &str, history: &str, d_model: usize, lr: f64, seed: u32) -> Result<ToyTrainer, JsError> {
        ops::ToyTrainer::new(rule, history, d_model, lr, seed as u64)
            .map(Self)
            .map_err(js)
    }

    /// JSON `{epoch, loss, val_top1}`.
    pub fn epoch(&mut self) -> Result<String, JsError> {
        let p = self.0.epoch().map_err(js)?;
        serde_json::to_string(&p).map_err(|e| JsError::new(&e.to_string()))
    }

    pub fn parameters(&self) -> usize {
        self.0.parameters()
    }
}
