//! WebAssembly bindings for the browser demo. Every export returns a JSON string.

pub mod demo;

use rankpilot::reward::RewardMode;
use serde::Serialize;
use wasm_bindgen::prelude::*;

fn to_json<T: Serialize>(result: Result<T, String>) -> Result<String, JsError> {
    let value = result.map_err(|e| JsError::new(&e))?;
    serde_json::to_string(&value).map_err(|e| JsError::new(&e.to_string()))
}

fn parse_mode(mode: &str) -> Result<RewardMode, JsError> {
    match mode {
        "conservative" => Ok(RewardMode::Conservative),
        "aggressive" => Ok(RewardMode::Aggressive),
        other => Err(JsError::new(&format!("unknown reward mode `{other}`"))),
    }
}

/// Spectrum and truncation summary of a synthetic `rows×cols` matrix at `energy`.
#[wasm_bindgen]
pub fn truncation(rows: usize, cols: usize, decay: f64, seed: u32, energy: f64) -> Result<String, JsError> {
    to_json(demo::truncation_view(rows, cols, decay, seed as u64, energy))
}

/// Reward-versus-error and punishment-versus-speedup curves.
#[wasm_bindgen]
pub fn reward_curves(baseline_error: f64, target_speedup: f64, mode: &str, points: usize) -> Result<String, JsError> {
    to_json(demo::reward_curves(baseline_error, target_speedup, parse_mode(mode)?, points))
}

/// A short controller search on the demo network.
#[wasm_bindgen]
pub fn search(target_speedup: f64, steps: usize, seed: u32, mode: &str) -> Result<String, JsError> {
    to_json(demo::search_view(target_speedup, steps, seed as u64, parse_mode(mode)?))
}
