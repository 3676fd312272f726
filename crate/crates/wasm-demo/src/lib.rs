//! Browser bindings. Each export returns a JSON string; `www/main.js` draws it.
//!
//! The logic lives in [`demo`] so it can be tested natively.

pub mod demo;

use wasm_bindgen::prelude::*;

fn to_js<T: serde::Serialize>(r: mvfnet::Result<T>) -> Result<String, JsError> {
    let value = r.map_err(|e| JsError::new(&e.to_string()))?;
    serde_json::to_string(&value).map_err(|e| JsError::new(&e.to_string()))
}

/// Per-view responses of one MVF module applied to a synthetic clip.
#[wasm_bindgen]
pub fn views(class_id: u32, seed: u32, beta_t: f64, beta_h: f64, beta_w: f64) -> Result<String, JsError> {
    to_js(demo::views(class_id as usize, seed as u64, [beta_t, beta_h, beta_w]))
}

/// Cost report for a backbone. `stages` is comma separated; `crops` or `clips` of 0 skip the
/// protocol total.
#[wasm_bindgen]
pub fn cost(backbone: &str, frames: u32, alpha: f64, stages: &str, classes: u32, crops: u32, clips: u32) -> Result<String, JsError> {
    to_js(demo::cost(backbone, frames as usize, alpha, stages, classes as usize, crops as usize, clips as usize))
}

/// Temporal shift of a labelled channel-by-time grid, next to the fixed-kernel MVF module.
#[wasm_bindgen]
pub fn shift(channels: u32, frames: u32, fraction: f64) -> Result<String, JsError> {
    to_js(demo::shift(channels as usize, frames as usize, fraction))
}
