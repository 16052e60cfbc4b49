//! Browser bindings: three interactive operations returning JSON strings.
//!
//! Each export has a plain Rust counterpart ending in `_json` so the same
//! code path is exercised by native tests.

use offpolicy::agents::Algorithm;
use offpolicy::control::{mellowmax, mellowmax_weights};
use offpolicy::harness;
use offpolicy::{Error, Result};
use wasm_bindgen::prelude::*;

/// Largest Kolter sweep resolution accepted from the page.
pub const MAX_SWEEP_POINTS: usize = 5000;

/// Largest star-trajectory length accepted from the page.
pub const MAX_BAIRD_ITERATIONS: usize = 2_000_000;

fn to_json<T: serde::Serialize>(value: &T) -> Result<String> {
    serde_json::to_string(value).map_err(Error::from)
}

/// Kolter sweep with `points` behavior-policy parameters.
pub fn kolter_sweep_json(points: usize) -> Result<String> {
    if points > MAX_SWEEP_POINTS {
        return Err(Error::InvalidParameter(format!("at most {MAX_SWEEP_POINTS} sweep points")));
    }
    to_json(&harness::kolter_sweep(points)?)
}

/// Mellowmax value, softmax weights, mean and max of one action-value row.
pub fn mellowmax_json(q: &[f64], tau: f64) -> Result<String> {
    if q.is_empty() || !q.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidParameter("action values must be finite and non-empty".into()));
    }
    if tau.is_nan() || tau < 0.0 || tau.is_infinite() {
        return Err(Error::InvalidParameter("tau must be finite and nonnegative".into()));
    }
    let mean = q.iter().sum::<f64>() / q.len() as f64;
    let max = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    to_json(&serde_json::json!({
        "value": mellowmax(q, tau),
        "weights": mellowmax_weights(q, tau),
        "mean": mean,
        "max": max,
    }))
}

/// Expected-update trajectories on the star counterexample for a
/// comma-separated list of algorithm names.
pub fn baird_expected_json(algorithms: &str, iterations: usize, check_every: usize) -> Result<String> {
    if iterations > MAX_BAIRD_ITERATIONS {
        return Err(Error::InvalidParameter(format!("at most {MAX_BAIRD_ITERATIONS} iterations")));
    }
    let algs = algorithms.split(',').map(|s| s.trim().parse::<Algorithm>()).collect::<Result<Vec<_>>>()?;
    to_json(&harness::baird_expected(&algs, iterations, check_every)?)
}

fn js(result: Result<String>) -> std::result::Result<String, JsError> {
    result.map_err(|e| JsError::new(&e.to_string()))
}

/// Kolter sweep as JSON.
#[wasm_bindgen]
pub fn kolter_sweep(points: usize) -> std::result::Result<String, JsError> {
    js(kolter_sweep_json(points))
}

/// Mellowmax summary of one action-value row as JSON.
#[wasm_bindgen]
pub fn mellowmax_explorer(q: &[f64], tau: f64) -> std::result::Result<String, JsError> {
    js(mellowmax_json(q, tau))
}

/// Star-counterexample trajectories as JSON.
#[wasm_bindgen]
pub fn baird_expected(algorithms: &str, iterations: usize, check_every: usize) -> std::result::Result<String, JsError> {
    js(baird_expected_json(algorithms, iterations, check_every))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kolter_json_carries_the_summary_ratios() {
        let v: serde_json::Value = serde_json::from_str(&kolter_sweep_json(11).unwrap()).unwrap();
        assert_eq!(v["points"].as_array().unwrap().len(), 11);
        assert!(v["max_pbe_to_be_ratio"].as_f64().unwrap() > 1.0);
    }

    #[test]
    fn mellowmax_json_sits_between_mean_and_max() {
        let v: serde_json::Value = serde_json::from_str(&mellowmax_json(&[0.0, 1.0, 3.0], 1.5).unwrap()).unwrap();
        let value = v["value"].as_f64().unwrap();
        assert!(v["mean"].as_f64().unwrap() <= value && value <= v["max"].as_f64().unwrap());
        let total: f64 = v["weights"].as_array().unwrap().iter().map(|w| w.as_f64().unwrap()).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn baird_json_lists_each_algorithm() {
        let v: serde_json::Value = serde_json::from_str(&baird_expected_json("td, tdrc", 2000, 100).unwrap()).unwrap();
        let curves = v.as_array().unwrap();
        assert_eq!(curves.len(), 2);
        assert!(!curves[1]["run"]["checkpoints"].as_array().unwrap().is_empty());
    }

    #[test]
    fn bad_inputs_are_rejected() {
        assert!(mellowmax_json(&[], 1.0).is_err());
        assert!(mellowmax_json(&[1.0], -1.0).is_err());
        assert!(baird_expected_json("nope", 10, 1).is_err());
        assert!(kolter_sweep_json(MAX_SWEEP_POINTS + 1).is_err());
    }
}
