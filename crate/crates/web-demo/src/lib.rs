//! Browser demo: BISG posterior explorer, response parser and an income-bias
//! simulation. Each export returns a JSON string for `www/index.html`.

use std::sync::Arc;

use ethno_core::bisg::{bisg_posterior, BisgTables, GeoTable, SurnameTable};
use ethno_core::llm::parse_response_detailed;
use ethno_core::metrics::income_bias_audit;
use ethno_core::prediction::{Engine, PredictedLabel, Prediction};
use ethno_core::records::{CategoryScheme, NameRecord, RecordSet};
use ethno_core::rng::SampleRng;
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

fn split_labels(labels: &str) -> Vec<String> {
    labels
        .split(',')
        .map(|l| l.trim().to_string())
        .filter(|l| !l.is_empty())
        .collect()
}

/// Posterior for one surname in one area. `here` holds the area's
/// population by category and `elsewhere` the rest of the region.
pub fn bisg_explore(labels: &str, prior: &[f64], here: &[f64], elsewhere: &[f64]) -> Result<Value, String> {
    let labels = split_labels(labels);
    let k = labels.len();
    if prior.len() != k || here.len() != k || elsewhere.len() != k {
        return Err(format!("expected {k} values per row"));
    }
    let sum: f64 = prior.iter().sum();
    if sum.is_nan() || sum <= 0.0 || prior.iter().any(|p| *p < 0.0) {
        return Err("surname probabilities must be non-negative with a positive sum".into());
    }
    let prior: Vec<f64> = prior.iter().map(|p| p / sum).collect();
    let scheme = CategoryScheme::from_labels("demo", &labels).map_err(|e| e.to_string())?;
    let surnames = SurnameTable::new(labels.clone(), [("DEMO", prior)]).map_err(|e| e.to_string())?;
    let geo = GeoTable::new(
        labels.clone(),
        [("here", here.to_vec()), ("elsewhere", elsewhere.to_vec())],
    )
    .map_err(|e| e.to_string())?;
    let tables = BisgTables::new(surnames, geo).map_err(|e| e.to_string())?;
    let with_geo = bisg_posterior("DEMO", Some("here"), &tables, &scheme).map_err(|e| e.to_string())?;
    let surname_only = bisg_posterior("DEMO", None, &tables, &scheme).map_err(|e| e.to_string())?;
    Ok(json!({
        "labels": labels,
        "posterior": with_geo.probs,
        "surname_only": surname_only.probs,
        "mode": labels[with_geo.mode_index],
        "degenerate": with_geo.degenerate,
    }))
}

/// Runs the repair ladder on `text`. `aliases` is `alias=label` pairs
/// separated by semicolons.
pub fn parse_explain(text: &str, labels: &str, aliases: &str) -> Result<Value, String> {
    let labels = split_labels(labels);
    let pairs: Vec<(String, String)> = aliases
        .split(';')
        .filter(|p| !p.trim().is_empty())
        .map(|p| {
            p.split_once('=')
                .map(|(a, l)| (a.trim().to_string(), l.trim().to_string()))
                .ok_or_else(|| format!("alias {p:?} is not alias=label"))
        })
        .collect::<Result<_, _>>()?;
    let scheme = CategoryScheme::new("demo", &labels, pairs).map_err(|e| e.to_string())?;
    let out = parse_response_detailed(text, &scheme);
    Ok(json!({
        "label": out.label.map(|i| scheme.label(i).to_string()).unwrap_or_else(|| "UNPARSEABLE".into()),
        "rule": out.rule,
        "mentioned": out.mentioned.iter().map(|i| scheme.label(*i)).collect::<Vec<_>>(),
    }))
}

/// Synthetic voters with incomes uniform on $0-100k whose misclassification
/// probability is `base + slope * (income/10k - 5)`, run through the audit.
pub fn simulate_income_bias(n: u32, base: f64, slope: f64, seed: u64) -> Result<Value, String> {
    if n < 20 {
        return Err("need at least 20 voters".into());
    }
    let scheme = Arc::new(CategoryScheme::from_labels("demo", ["Black", "White"]).map_err(|e| e.to_string())?);
    let mut rng = SampleRng::new(seed);
    let mut records = Vec::with_capacity(n as usize);
    let mut preds = Vec::with_capacity(n as usize);
    for i in 0..n {
        let x = 10.0 * rng.unit_f64();
        let p = (base + slope * (x - 5.0)).clamp(0.0, 1.0);
        let wrong = rng.unit_f64() < p;
        let id = format!("v{i}");
        records.push(NameRecord {
            id: id.clone(),
            surname: "Demo".into(),
            income: Some(10_000.0 * x),
            truth_label: Some("Black".into()),
            ..Default::default()
        });
        preds.push(Prediction {
            id,
            label: PredictedLabel::Category(if wrong { "White" } else { "Black" }.into()),
            raw_response: String::new(),
            engine: Engine::Llm,
            model_id: "simulated".into(),
            prompt_hash: String::new(),
            cached: false,
            probs: None,
            error: None,
        });
    }
    let set = RecordSet::new(records, scheme, "simulation").map_err(|e| e.to_string())?;
    let report = income_bias_audit(&preds, &set, "simulated").map_err(|e| e.to_string())?;
    let race = report.races.into_iter().next().ok_or("no race audited")?;
    Ok(json!({
        "ventiles": race.ventiles,
        "ols": race.ols,
        "misclassification_rate": race.misclassification_rate,
    }))
}

fn to_js(r: Result<Value, String>) -> Result<String, JsError> {
    r.map(|v| v.to_string()).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = bisgPosterior)]
pub fn bisg_posterior_js(labels: &str, prior: &[f64], here: &[f64], elsewhere: &[f64]) -> Result<String, JsError> {
    to_js(bisg_explore(labels, prior, here, elsewhere))
}

#[wasm_bindgen(js_name = parseResponse)]
pub fn parse_response_js(text: &str, labels: &str, aliases: &str) -> Result<String, JsError> {
    to_js(parse_explain(text, labels, aliases))
}

#[wasm_bindgen(js_name = simulateIncomeBias)]
pub fn simulate_income_bias_js(n: u32, base: f64, slope: f64, seed: u32) -> Result<String, JsError> {
    to_js(simulate_income_bias(n, base, slope, u64::from(seed)))
}
