//! Browser bindings for the reference loop: retune the detector, recompute
//! both bounds, and sample attack clouds against them.

use serde_json::{json, Value};
use stealth_reach::attack::AttackSpec;
use stealth_reach::bound::ReachBound;
use stealth_reach::detector::DetectorConfig;
use stealth_reach::geom::{geometric_bounds, total_state_bound_geom, GeomSumConfig};
use stealth_reach::lmi::{lmi_bounds, total_state_bound_lmi, LmiGrid};
use stealth_reach::montecarlo::{containment_report, empirical_cloud, CloudConfig, CloudSource};
use stealth_reach::plant::PlantModel;
use stealth_reach::system::reference_system;
use wasm_bindgen::prelude::*;

const OUTLINE_SAMPLES: usize = 120;

fn js(e: impl std::fmt::Display) -> JsValue {
    JsValue::from_str(&e.to_string())
}

fn setup(rate: f64) -> Result<(PlantModel, DetectorConfig), JsValue> {
    let model = reference_system(None).map_err(js)?;
    let det = DetectorConfig::tuned(model.residual_covariance(), rate).map_err(js)?;
    Ok((model, det))
}

fn rows(m: &nalgebra::DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn bound_json(b: &ReachBound) -> Result<Value, JsValue> {
    Ok(json!({
        "method": b.method.name(),
        "target": b.target.name(),
        "volume": b.volume,
        "a_star": b.a_star,
        "outline": b.shape.outline(OUTLINE_SAMPLES).map_err(js)?,
    }))
}

/// Threshold, truncation level and filter quantities at false-alarm rate `rate`.
#[wasm_bindgen]
pub fn tune(rate: f64) -> Result<String, JsValue> {
    let (model, det) = setup(rate)?;
    Ok(json!({
        "alpha": det.alpha,
        "vbar": det.vbar(model.state_dim()).map_err(js)?,
        "sigma": rows(model.residual_covariance()),
        "L": rows(model.observer_gain()),
    })
    .to_string())
}

/// Attack-state and total-state bounds for both methods at rate `rate`.
#[wasm_bindgen]
pub fn bounds(rate: f64) -> Result<String, JsValue> {
    let (model, det) = setup(rate)?;
    let vbar = det.vbar(model.state_dim()).map_err(js)?;
    let l = lmi_bounds(&model, det.alpha, vbar, &LmiGrid::default()).map_err(js)?;
    let g = geometric_bounds(&model, det.alpha, vbar, &GeomSumConfig::default()).map_err(js)?;
    let all = [
        total_state_bound_lmi(&l.noise, &l.attack_state).map_err(js)?,
        l.attack_state,
        total_state_bound_geom(&g.noise, &g.attack_state).map_err(js)?,
        g.attack_state,
    ];
    let list = all.iter().map(bound_json).collect::<Result<Vec<_>, _>>()?;
    Ok(json!({ "alpha": det.alpha, "bounds": list }).to_string())
}

/// Samples a cloud under a named attack preset (`ZA.A` … `H.D`) and scores
/// it against the geometric and LMI bounds of the matching target. `total`
/// selects the full state (with truncated noise) instead of the attack part.
#[wasm_bindgen]
pub fn sample_cloud(rate: f64, preset: &str, trials: usize, seed: u64, total: bool) -> Result<String, JsValue> {
    let (model, det) = setup(rate)?;
    let vbar = det.vbar(model.state_dim()).map_err(js)?;
    let spec = AttackSpec::preset(preset, det.alpha, rate).map_err(js)?;
    let mut cfg = CloudConfig::new(trials.clamp(1, 2000), 150, seed);
    cfg.sim.truncate_noise = true;
    let source = if total { CloudSource::Total } else { CloudSource::AttackOnly };
    let cloud = empirical_cloud(&model, &det, &cfg, Some(&spec), source).map_err(js)?;

    let l = lmi_bounds(&model, det.alpha, vbar, &LmiGrid::default()).map_err(js)?;
    let g = geometric_bounds(&model, det.alpha, vbar, &GeomSumConfig::default()).map_err(js)?;
    let targets = if total {
        vec![
            total_state_bound_lmi(&l.noise, &l.attack_state).map_err(js)?,
            total_state_bound_geom(&g.noise, &g.attack_state).map_err(js)?,
        ]
    } else {
        vec![l.attack_state, g.attack_state]
    };
    let refs: Vec<&ReachBound> = targets.iter().collect();
    let report = containment_report(&cloud, &refs).map_err(js)?;
    let summary: Vec<Value> = report
        .entries
        .iter()
        .map(|e| {
            json!({
                "method": e.method.name(),
                "contained": e.fractions[1].1,
                "escapes": e.escapes,
                "max_membership": e.max_membership,
            })
        })
        .collect();
    Ok(json!({
        "points": cloud.points,
        "count": cloud.len(),
        "containment": summary,
        "bounds": targets.iter().map(bound_json).collect::<Result<Vec<_>, _>>()?,
    })
    .to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tune_matches_closed_form() {
        let v: Value = serde_json::from_str(&tune(0.05).unwrap()).unwrap();
        assert!((v["alpha"].as_f64().unwrap() - 5.991464547107979).abs() < 1e-9);
    }

    #[test]
    fn cloud_is_scored_against_both_methods() {
        let v: Value = serde_json::from_str(&sample_cloud(0.05, "ZA.C", 20, 3, false).unwrap()).unwrap();
        assert_eq!(v["count"], 2000);
        assert_eq!(v["points"].as_array().unwrap().len(), 4000);
        for c in v["containment"].as_array().unwrap() {
            assert_eq!(c["contained"], 1.0);
        }
        let b: Value = serde_json::from_str(&bounds(0.05).unwrap()).unwrap();
        assert_eq!(b["bounds"].as_array().unwrap().len(), 4);
    }
}
