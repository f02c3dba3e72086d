//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Every export takes a model as JSON text and returns JSON text.

use har_core::lincore::{compute_coefficients_default, ClusterMixture};
use har_core::model::{self, InitialCondition, ModelParams};
use har_core::simulate::{simulate_stationary, simulate_thinning, Window};
use har_core::spectral::{build_h, build_m_plus};
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

fn parse_model(text: &str) -> Result<ModelParams, String> {
    let doc: Value = serde_json::from_str(text).map_err(|e| e.to_string())?;
    model::io::from_json(&doc).map(|(m, _)| m).map_err(|e| e.to_string())
}

pub fn simulate_json(model: &str, t0: f64, t1: f64, burn_in: f64, seed: u64) -> Result<String, String> {
    let model = parse_model(model)?;
    let window = Window::new(t0, t1).map_err(|e| e.to_string())?;
    let path = if burn_in > 0.0 {
        simulate_stationary(&model, window, burn_in, seed)
    } else {
        simulate_thinning(&model, &InitialCondition::empty(&model, t0), t1, seed)
    }
    .map_err(|e| e.to_string())?;
    let chains: Vec<Value> = (0..path.num_chains())
        .map(|p| {
            let pts: Vec<[f64; 2]> = path.chain_points(p).map(|(_, k, v)| [k, v]).collect();
            json!({"label": model.label(model.chain(p)), "points": pts})
        })
        .collect();
    let nodes: Vec<Value> = path
        .events
        .iter()
        .enumerate()
        .map(|(m, ev)| json!({"label": model.label(m), "events": ev}))
        .collect();
    Ok(json!({
        "model_hash": path.model_hash,
        "seed": seed,
        "window": [t0, t1],
        "nodes": nodes,
        "chains": chains,
    })
    .to_string())
}

pub fn cluster_curve_json(model: &str, target: usize, origin: usize, t_max: f64, points: usize) -> Result<String, String> {
    let model = parse_model(model)?;
    if target >= model.nodes() || origin >= model.nodes() {
        return Err(format!("node index out of range (model has {} nodes)", model.nodes()));
    }
    if !(t_max > 0.0) || points < 2 {
        return Err("need t_max > 0 and at least 2 points".into());
    }
    let table = compute_coefficients_default(&model).map_err(|e| e.to_string())?;
    let mix = ClusterMixture::new(&table, target, origin, 0.0, t_max);
    let direct = model.kernel(target, origin);
    let mut curve = Vec::with_capacity(points);
    for i in 1..=points {
        let t = t_max * i as f64 / points as f64;
        curve.push(json!({
            "t": t,
            "cluster": mix.eval(&model, t),
            "direct": direct.eval(t),
            "mass": mix.mass_to(&model, t),
        }));
    }
    Ok(json!({"target": model.label(target), "origin": model.label(origin), "curve": curve}).to_string())
}

pub fn spectral_json(model: &str) -> Result<String, String> {
    let model = parse_model(model)?;
    let report = model::validate(&model).map_err(|e| e.to_string())?;
    let h = build_h(&model).map_err(|e| e.to_string())?;
    let plus = build_m_plus(&model).and_then(|p| build_h(&p)).map_err(|e| e.to_string())?;
    let rows: Vec<Vec<f64>> = (0..h.matrix.nrows()).map(|i| h.matrix.row(i).iter().copied().collect()).collect();
    let labels: Vec<String> = (0..model.dim()).map(|c| model.label(c)).collect();
    Ok(json!({
        "ok": report.ok(),
        "labels": labels,
        "h": rows,
        "spectral_radius": h.spectral_radius(),
        "spectral_radius_dominating": plus.spectral_radius(),
        "report": report,
    })
    .to_string())
}

#[wasm_bindgen]
pub fn simulate_path(model: &str, t0: f64, t1: f64, burn_in: f64, seed: u32) -> Result<String, JsValue> {
    simulate_json(model, t0, t1, burn_in, seed as u64).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn cluster_function_curve(model: &str, target: usize, origin: usize, t_max: f64, points: usize) -> Result<String, JsValue> {
    cluster_curve_json(model, target, origin, t_max, points).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn spectral_report(model: &str) -> Result<String, JsValue> {
    spectral_json(model).map_err(|e| JsValue::from_str(&e))
}
