//! Browser bindings: sequence mining on pasted events, the synthetic
//! outcome-scenario table, and ROC/calibration of the generator's true risk.

use std::collections::BTreeMap;

use mlho::cohort::{ingest_events, Outcome, DEMOGRAPHICS_HEADER, OUTCOMES_HEADER};
use mlho::evaluation::{auc_roc, calibration_bins, BinScheme};
use mlho::synth::{generate_cohort, GeneratorSpec};
use mlho::tspm::{mine_raw, mine_transitive, MiningOptions};
use serde::Serialize;
use wasm_bindgen::prelude::*;

const MAX_DEMO_PATIENTS: usize = 3000;
const MAX_ROC_POINTS: usize = 200;

fn to_json<T: Serialize>(value: &T) -> Result<String, JsValue> {
    serde_json::to_string(value).map_err(|e| JsValue::from_str(&e.to_string()))
}

fn js_err(e: impl std::fmt::Display) -> JsValue {
    JsValue::from_str(&e.to_string())
}

#[derive(Serialize)]
struct SequenceRow {
    feature: String,
    kind: &'static str,
    patients: usize,
    prevalence: f64,
}

#[derive(Serialize)]
struct MiningResult {
    patients: usize,
    codes: usize,
    sequences: usize,
    top: Vec<SequenceRow>,
}

/// Mines raw codes and transitive sequences from `patient_id,code,date`
/// rows (header required, ISO dates). Returns the `limit` most prevalent
/// features as JSON.
#[wasm_bindgen]
pub fn mine_events(events_csv: &str, limit: usize) -> Result<String, JsValue> {
    let mut latest: BTreeMap<String, String> = BTreeMap::new();
    for line in events_csv.lines().skip(1).filter(|l| !l.trim().is_empty()) {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 3 {
            return Err(js_err(format!("expected patient_id,code,date in `{line}`")));
        }
        let entry = latest.entry(fields[0].to_string()).or_default();
        if fields[2] > entry.as_str() {
            *entry = fields[2].to_string();
        }
    }
    // Placeholder demographics and outcomes; the index date follows each
    // patient's last event so nothing is cut by the buffer.
    let mut demographics = DEMOGRAPHICS_HEADER.join(",") + "\n";
    let mut outcomes = OUTCOMES_HEADER.join(",") + "\n";
    for (id, last) in &latest {
        let index = chrono::NaiveDate::parse_from_str(last, "%Y-%m-%d")
            .map_err(|e| js_err(format!("date `{last}`: {e}")))?
            .succ_opt()
            .ok_or_else(|| js_err("date out of range"))?;
        demographics.push_str(&format!("{id},50,unknown,unknown,unknown\n"));
        outcomes.push_str(&format!("{id},{index},0,,0,,0,,0,\n"));
    }
    let cohort = ingest_events(events_csv.as_bytes(), demographics.as_bytes(), outcomes.as_bytes()).map_err(js_err)?;
    let raw = mine_raw(&cohort);
    let seq = mine_transitive(&cohort, &MiningOptions::default()).map_err(js_err)?;
    let n = cohort.len().max(1) as f64;
    let mut top: Vec<SequenceRow> = [(&raw, "raw"), (&seq, "sequence")]
        .into_iter()
        .flat_map(|(m, kind)| {
            m.features()
                .iter()
                .zip(m.column_counts())
                .map(move |(f, c)| SequenceRow {
                    feature: f.to_string(),
                    kind,
                    patients: c,
                    prevalence: c as f64 / n,
                })
        })
        .collect();
    top.sort_by(|a, b| b.patients.cmp(&a.patients).then_with(|| a.feature.cmp(&b.feature)));
    top.truncate(limit);
    to_json(&MiningResult {
        patients: cohort.len(),
        codes: raw.n_features(),
        sequences: seq.n_features(),
        top,
    })
}

#[derive(Serialize)]
struct ScenarioRow {
    scenario: String,
    count: usize,
    probability: f64,
}

#[derive(Serialize)]
struct ScenarioResult {
    patients: usize,
    outcome_rates: BTreeMap<&'static str, f64>,
    scenarios: Vec<ScenarioRow>,
    excluded: usize,
}

fn demo_spec(n_patients: usize, seed: u64) -> GeneratorSpec {
    let mut spec = GeneratorSpec::default_desk_scale(seed);
    spec.n_patients = n_patients.clamp(50, MAX_DEMO_PATIENTS);
    spec
}

/// Generates a synthetic cohort and returns its outcome-scenario
/// probabilities as JSON.
#[wasm_bindgen]
pub fn scenario_table(n_patients: usize, seed: u64) -> Result<String, JsValue> {
    let (cohort, _) = generate_cohort(&demo_spec(n_patients, seed)).map_err(js_err)?;
    let table = cohort.scenario_probabilities();
    let summary = cohort.summary();
    to_json(&ScenarioResult {
        patients: cohort.len(),
        outcome_rates: summary.outcomes.iter().map(|o| (o.outcome.key(), o.rate)).collect(),
        scenarios: table
            .counts
            .iter()
            .map(|(s, &count)| ScenarioRow {
                scenario: s.clone(),
                count,
                probability: table.probabilities[s],
            })
            .collect(),
        excluded: table.excluded.len(),
    })
}

#[derive(Serialize)]
struct CalibrationRow {
    mean_pred: Option<f64>,
    obs_frac: Option<f64>,
    count: usize,
}

#[derive(Serialize)]
struct RiskResult {
    outcome: &'static str,
    prevalence: f64,
    auc: f64,
    roc: Vec<(f64, f64)>,
    calibration: Vec<CalibrationRow>,
    mean_abs_gap: f64,
}

/// ROC curve and reliability bins of the generator's true outcome
/// probabilities against the sampled labels. `noise` in `[0, 1]` blends the
/// true risk toward 0.5, which keeps the ranking and skews calibration.
#[wasm_bindgen]
pub fn true_risk_diagnostics(
    n_patients: usize,
    seed: u64,
    outcome: &str,
    bins: usize,
    noise: f64,
) -> Result<String, JsValue> {
    let outcome = Outcome::from_key(outcome).ok_or_else(|| js_err(format!("unknown outcome `{outcome}`")))?;
    let (cohort, truth) = generate_cohort(&demo_spec(n_patients, seed)).map_err(js_err)?;
    let risk: BTreeMap<&str, f64> = truth
        .true_probs
        .iter()
        .map(|t| (t.patient_id.as_str(), t.outcomes[outcome.index()]))
        .collect();
    let noise = noise.clamp(0.0, 1.0);
    let scores: Vec<f64> = cohort
        .patients()
        .iter()
        .map(|p| (1.0 - noise) * risk[p.patient_id()] + noise * 0.5)
        .collect();
    let labels = cohort.labels(outcome);
    let roc = auc_roc(&scores, &labels).map_err(js_err)?;
    let curve = calibration_bins(&scores, &labels, bins.max(1), BinScheme::EqualWidth).map_err(js_err)?;
    let stride = roc.points.len().div_ceil(MAX_ROC_POINTS).max(1);
    let mut points: Vec<(f64, f64)> = roc.points.iter().step_by(stride).copied().collect();
    if points.last() != roc.points.last() {
        points.push(*roc.points.last().expect("ROC has end points"));
    }
    to_json(&RiskResult {
        outcome: outcome.key(),
        prevalence: labels.iter().filter(|&&y| y).count() as f64 / labels.len() as f64,
        auc: roc.auc,
        roc: points,
        mean_abs_gap: curve.mean_abs_gap(),
        calibration: curve
            .bins
            .iter()
            .map(|b| CalibrationRow {
                mean_pred: b.mean_pred,
                obs_frac: b.obs_frac,
                count: b.count,
            })
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mines_pasted_events() {
        let csv = "patient_id,code,date\np1,A,2020-01-01\np1,B,2020-01-05\np2,B,2020-02-01\np2,A,2020-02-03\n";
        let out: serde_json::Value = serde_json::from_str(&mine_events(csv, 10).unwrap()).unwrap();
        assert_eq!(out["patients"], 2);
        assert_eq!(out["sequences"], 2);
        let top = out["top"].as_array().unwrap();
        assert_eq!(top[0]["patients"], 2);
    }

    #[test]
    fn scenario_probabilities_sum_to_one() {
        let out: serde_json::Value = serde_json::from_str(&scenario_table(300, 7).unwrap()).unwrap();
        let total: f64 = out["scenarios"]
            .as_array()
            .unwrap()
            .iter()
            .map(|s| s["probability"].as_f64().unwrap())
            .sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn blending_keeps_auc_and_skews_calibration() {
        let clean: serde_json::Value =
            serde_json::from_str(&true_risk_diagnostics(400, 3, "hosp", 10, 0.0).unwrap()).unwrap();
        let noisy: serde_json::Value =
            serde_json::from_str(&true_risk_diagnostics(400, 3, "hosp", 10, 0.5).unwrap()).unwrap();
        assert_eq!(clean["auc"], noisy["auc"]);
        assert!(noisy["mean_abs_gap"].as_f64().unwrap() > clean["mean_abs_gap"].as_f64().unwrap());
    }
}
