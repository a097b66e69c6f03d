//! Browser bindings. Each exported function takes plain values and returns
//! a JSON string; the pure versions below are what the tests exercise.

use causalmix::control::{parse, ControlSpec, ScenarioConfig};
use causalmix::data::Table;
use causalmix::demo::{demo_schema, demo_table};
use causalmix::eval::distributional::{c2st, energy_distance, normalized_wasserstein};
use causalmix::eval::embedding::joint_embedding;
use causalmix::eval::encode::Encoding;
use causalmix::eval::privacy::dcr_protection;
use causalmix::eval::stats;
use causalmix::pipeline::tau_center;
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

/// Keeps the page responsive; the metrics are quadratic in rows.
pub const MAX_ROWS: usize = 2000;
const TAU_BINS: usize = 24;
const EMBED_ROWS: usize = 150;

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

/// Parses one control expression against the demo schema. `role` is
/// `tau`, `kappa` or `log_alpha`; only kappa may use `T`.
pub fn check_expression_json(source: &str, role: &str) -> Result<Value, String> {
    let allow_t = match role {
        "kappa" => true,
        "tau" | "log_alpha" => false,
        other => return Err(format!("unknown role `{other}`")),
    };
    let expr = parse(source).map_err(err)?;
    expr.validate(&demo_schema(), allow_t).map_err(err)?;
    let mut refs: Vec<&str> = expr.covariate_refs();
    refs.sort_unstable();
    refs.dedup();
    Ok(json!({
        "canonical": expr.to_string(),
        "depth": expr.depth(),
        "covariates": refs,
        "uses_treatment": expr.uses_treatment(),
    }))
}

fn rows(n: usize) -> Result<usize, String> {
    if !(50..=MAX_ROWS).contains(&n) {
        return Err(format!("row count must lie in 50..={MAX_ROWS}"));
    }
    Ok(n)
}

fn histogram(v: &[f64], bins: usize) -> Value {
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let mut counts = vec![0usize; bins];
    for x in v {
        counts[(((x - lo) / width) as usize).min(bins - 1)] += 1;
    }
    json!({ "low": lo, "width": width, "counts": counts })
}

/// Ground truth of a scenario on a freshly drawn demo table.
pub fn scenario_truth_json(tau: &str, kappa: &str, log_alpha: &str, n: usize, seed: u64) -> Result<Value, String> {
    let table = demo_table(rows(n)?, seed).map_err(err)?;
    let cfg = ScenarioConfig {
        tau: tau.into(),
        kappa: kappa.into(),
        log_alpha: log_alpha.into(),
        eta: None,
    };
    let control = ControlSpec::from_config(cfg, table.schema()).map_err(err)?;
    let center = tau_center(&control, &table).map_err(err)?;
    let truth = control.evaluate_table(&table, table.treatment(), center).map_err(err)?;
    let by_arm = |arm: f64| {
        let v: Vec<f64> = truth
            .kappa
            .iter()
            .zip(table.treatment())
            .filter(|(_, t)| **t == arm)
            .map(|(k, _)| *k)
            .collect();
        (!v.is_empty()).then(|| stats::mean(&v))
    };
    // share of rows where one arm is over e times as dense as the other
    let weak = truth.log_alpha.iter().filter(|v| v.abs() > 1.0).count() as f64 / n as f64;
    Ok(json!({
        "ate": stats::mean(&truth.tau),
        "tau_sd": stats::sd(&truth.tau),
        "tau_histogram": histogram(&truth.tau, TAU_BINS),
        "kappa_mean_t0": by_arm(0.0),
        "kappa_mean_t1": by_arm(1.0),
        "weak_overlap_fraction": weak,
    }))
}

/// Audits a second demo draw whose age and PSA are shifted by `shift`
/// standard units against the first.
pub fn audit_shift_json(shift: f64, n: usize, seed: u64) -> Result<Value, String> {
    if !shift.is_finite() {
        return Err("shift must be finite".into());
    }
    let n = rows(n)?;
    let real = demo_table(n, seed).map_err(err)?;
    let other = demo_table(n, seed.wrapping_add(1)).map_err(err)?;
    let mut cols = other.columns().to_vec();
    for name in ["age", "log_psa"] {
        let j = other.schema().index_of(name).ok_or("demo column missing")?;
        cols[j].iter_mut().for_each(|v| *v += shift);
    }
    let synth = Table::new(other.schema().clone(), cols).map_err(err)?;

    let enc = Encoding::fit_all(&real).map_err(err)?;
    let (xr, xs) = (enc.encode(&real).map_err(err)?, enc.encode(&synth).map_err(err)?);
    let (_, energy) = energy_distance(&xr, &xs).map_err(err)?;
    let c = c2st(&xr, &xs, seed).map_err(err)?;
    let w1 =
        normalized_wasserstein(real.column("age").map_err(err)?, synth.column("age").map_err(err)?).map_err(err)?;
    let dcr = dcr_protection(&real, &synth).map_err(err)?;
    let emb = joint_embedding(&real, &synth, EMBED_ROWS, seed).map_err(err)?;
    let points: Vec<Value> = (0..emb.coords.rows)
        .map(|i| json!([emb.coords.get(i, 0), emb.coords.get(i, 1), emb.is_synth[i]]))
        .collect();
    Ok(json!({
        "normalized_energy": energy,
        "c2st_complement": c.score,
        "age_normalized_w1": w1,
        "protection_fraction": dcr.fraction,
        "distance_ratio_p50": dcr.ratio_p50,
        "embedding": points,
    }))
}

fn to_js(r: Result<Value, String>) -> Result<String, JsError> {
    r.map(|v| v.to_string()).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = checkExpression)]
pub fn check_expression(source: &str, role: &str) -> Result<String, JsError> {
    to_js(check_expression_json(source, role))
}

#[wasm_bindgen(js_name = scenarioTruth)]
pub fn scenario_truth(tau: &str, kappa: &str, log_alpha: &str, n: usize, seed: u32) -> Result<String, JsError> {
    to_js(scenario_truth_json(tau, kappa, log_alpha, n, u64::from(seed)))
}

#[wasm_bindgen(js_name = auditShift)]
pub fn audit_shift(shift: f64, n: usize, seed: u32) -> Result<String, JsError> {
    to_js(audit_shift_json(shift, n, u64::from(seed)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expression_summary() {
        let v = check_expression_json("0.05 - 0.01*(2*T - 1)*tanh(cvd + age)", "kappa").unwrap();
        assert_eq!(v["uses_treatment"], true);
        assert_eq!(v["covariates"], json!(["age", "cvd"]));
        assert!(check_expression_json("0.1*T", "tau").is_err());
        assert!(check_expression_json("0.1*weight", "tau")
            .unwrap_err()
            .contains("weight"));
        assert!(check_expression_json("1", "eta").is_err());
    }

    #[test]
    fn constant_scenario_truth() {
        let v = scenario_truth_json("0.1", "0.02", "0", 200, 3).unwrap();
        let f = |k: &str| v[k].as_f64().unwrap();
        assert!((f("ate") - 0.1).abs() < 1e-12);
        assert!(f("tau_sd") < 1e-12);
        assert!((f("kappa_mean_t0") - 0.02).abs() < 1e-12);
        assert_eq!(v["weak_overlap_fraction"], 0.0);
        let counts: u64 = v["tau_histogram"]["counts"]
            .as_array()
            .unwrap()
            .iter()
            .map(|c| c.as_u64().unwrap())
            .sum();
        assert_eq!(counts, 200);
        assert!(scenario_truth_json("0.1", "0", "0", 10, 3).is_err());
    }

    #[test]
    fn larger_shift_is_easier_to_detect() {
        let near = audit_shift_json(0.0, 300, 1).unwrap();
        let far = audit_shift_json(3.0, 300, 1).unwrap();
        let e = |v: &Value| v["normalized_energy"].as_f64().unwrap();
        let c = |v: &Value| v["c2st_complement"].as_f64().unwrap();
        assert!(e(&far) > e(&near));
        assert!(c(&far) < c(&near));
        assert!(far["protection_fraction"].as_f64().unwrap() > near["protection_fraction"].as_f64().unwrap());
        assert_eq!(far["embedding"].as_array().unwrap().len(), 300);
    }
}
