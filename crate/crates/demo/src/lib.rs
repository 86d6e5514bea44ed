//! Browser bindings over the change-point detector, the ROC sweep and the
//! corruption procedures. Every entry point returns a JSON string.

use rand::Rng;
use serde::Serialize;
use wasm_bindgen::prelude::*;

use vqprofile::cpd::{
    alarm_scores, roc_sweep, run, AlarmConfig, AlarmMethod, Categorical, Hazard, ModelSpec, ScoredSeries, Sequence,
    PRUNE_THRESHOLD,
};
use vqprofile::datagen::{clip_and_flag, corrupt_mcar, corrupt_mnar, generate_cohort, Catalog, CohortConfig, McarConfig, MnarConfig};
use vqprofile::seed::rng_for;

/// Posterior rows wider than this are truncated for display.
pub const MAX_RUN_LENGTH_SHOWN: usize = 120;

#[derive(Serialize)]
pub struct RunLengthView {
    pub ids: Vec<usize>,
    pub change_points: Vec<usize>,
    pub map: Vec<usize>,
    pub scores: Vec<f64>,
    /// `posterior[t][r]` for `r < MAX_RUN_LENGTH_SHOWN`.
    pub posterior: Vec<Vec<f64>>,
    pub ln_evidence: f64,
}

fn method(name: &str) -> Result<AlarmMethod, String> {
    serde_json::from_value(serde_json::Value::String(name.to_string())).map_err(|_| format!("unknown alarm method {name:?}"))
}

/// Piecewise-stationary profile ids: each segment draws mostly from its own
/// small subset of the `k` profiles.
pub fn synthetic_ids(seed: u64, len: usize, k: usize, segment: usize, purity: f64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = rng_for(seed, "demo/ids");
    let mut ids = Vec::with_capacity(len);
    let mut changes = Vec::new();
    let mut home = rng.random_range(0..k);
    for t in 0..len {
        if t > 0 && t % segment.max(1) == 0 {
            changes.push(t);
            home = (home + 1 + rng.random_range(0..k.max(2) - 1)) % k;
        }
        ids.push(if rng.random::<f64>() < purity { home } else { rng.random_range(0..k) });
    }
    (ids, changes)
}

pub fn parse_ids(text: &str) -> Result<Vec<usize>, String> {
    text.split(|c: char| c.is_whitespace() || c == ',')
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<usize>().map_err(|_| format!("not a profile id: {s:?}")))
        .collect()
}

pub fn explore(ids: Vec<usize>, change_points: Vec<usize>, lambda: f64, alpha: f64, alarm: &str, window: usize) -> Result<RunLengthView, String> {
    if ids.is_empty() {
        return Err("empty sequence".into());
    }
    let k = ids.iter().max().map_or(1, |m| m + 1);
    let spec = ModelSpec::Hierarchical(Categorical::new(k, alpha));
    let hazard = Hazard::new(lambda).map_err(|e| e.to_string())?;
    let post = run(&Sequence::Ids(ids.clone()), &spec, hazard, Some(PRUNE_THRESHOLD)).map_err(|e| e.to_string())?;
    let cfg = AlarmConfig {
        method: method(alarm)?,
        window,
        ..AlarmConfig::default()
    };
    let posterior = (1..=post.len())
        .map(|t| post.dense_row(t).into_iter().take(MAX_RUN_LENGTH_SHOWN).collect())
        .collect();
    Ok(RunLengthView {
        scores: alarm_scores(&post, &cfg),
        map: post.map.clone(),
        ln_evidence: post.ln_evidence,
        posterior,
        ids,
        change_points,
    })
}

#[derive(Serialize)]
pub struct RocView {
    pub method: String,
    pub window: usize,
    pub auc: f64,
    pub fpr: Vec<f64>,
    pub sensitivity: Vec<f64>,
    pub events: usize,
}

/// ROC of one alarm method over synthetic sequences whose events trail
/// each change point by `lag` days.
pub fn roc_demo(seed: u64, n_series: usize, len: usize, lambda: f64, alarm: &str, window: usize, lag: usize) -> Result<RocView, String> {
    let cfg = AlarmConfig {
        method: method(alarm)?,
        window,
        ..AlarmConfig::default()
    };
    let hazard = Hazard::new(lambda).map_err(|e| e.to_string())?;
    let k = 8;
    let mut series = Vec::with_capacity(n_series);
    for i in 0..n_series {
        let (ids, changes) = synthetic_ids(seed.wrapping_add(i as u64), len, k, len / 3, 0.7);
        let post = run(&Sequence::Ids(ids), &ModelSpec::Hierarchical(Categorical::new(k, 0.1)), hazard, Some(PRUNE_THRESHOLD))
            .map_err(|e| e.to_string())?;
        series.push(ScoredSeries {
            id: format!("s{i}"),
            scores: alarm_scores(&post, &cfg),
            events: changes.iter().map(|c| c + lag).filter(|&e| e < len).collect(),
        });
    }
    let roc = roc_sweep(&series, cfg.direction(), None, window).map_err(|e| e.to_string())?;
    let mut pts: Vec<(f64, f64)> = roc.points.iter().map(|p| (p.fpr, p.sensitivity)).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    Ok(RocView {
        method: cfg.method.name().to_string(),
        window,
        auc: roc.auc,
        fpr: pts.iter().map(|p| p.0).collect(),
        sensitivity: pts.iter().map(|p| p.1).collect(),
        events: series.iter().map(|s| s.events.len()).sum(),
    })
}

#[derive(Serialize)]
pub struct MissingnessView {
    pub variables: Vec<String>,
    pub days: usize,
    /// `[variable][day]` mask codes: 0 missing, 1 observed, 2 hidden.
    pub original: Vec<Vec<u8>>,
    pub mcar: Vec<Vec<u8>>,
    pub mnar: Vec<Vec<u8>>,
}

pub fn missingness(seed: u64, days: usize, mcar_rate: f64) -> Result<MissingnessView, String> {
    let catalog = Catalog::default_catalog();
    let cfg = CohortConfig {
        n_patients: 1,
        min_length: days,
        max_length: days,
        ..CohortConfig::default()
    };
    let (raw, _) = generate_cohort(seed, &cfg, &catalog).map_err(|e| e.to_string())?;
    let sample = clip_and_flag(&raw[0], &catalog).map_err(|e| e.to_string())?;
    let mcar = corrupt_mcar(&sample, &catalog, &McarConfig { rate: mcar_rate, ..McarConfig::default() }, seed)
        .map_err(|e| e.to_string())?;
    let mnar = corrupt_mnar(&sample, &catalog, &MnarConfig::default(), seed).map_err(|e| e.to_string())?;
    Ok(MissingnessView {
        variables: catalog.names(),
        days: sample.len(),
        original: sample.mask.clone(),
        mcar: mcar.mask,
        mnar: mnar.mask,
    })
}

fn to_js<T: Serialize>(r: Result<T, String>) -> Result<String, JsValue> {
    r.and_then(|v| serde_json::to_string(&v).map_err(|e| e.to_string())).map_err(|e| JsValue::from_str(&e))
}

/// Run-length posterior of a typed sequence, or of a synthetic one when
/// `text` is blank.
#[wasm_bindgen]
pub fn run_length_explorer(text: &str, seed: u32, lambda: f64, alpha: f64, alarm: &str, window: usize) -> Result<String, JsValue> {
    to_js(if text.trim().is_empty() {
        let (ids, changes) = synthetic_ids(u64::from(seed), 150, 12, 40, 0.75);
        explore(ids, changes, lambda, alpha, alarm, window)
    } else {
        parse_ids(text).and_then(|ids| explore(ids, Vec::new(), lambda, alpha, alarm, window))
    })
}

#[wasm_bindgen]
pub fn roc_sweep_demo(seed: u32, n_series: usize, lambda: f64, alarm: &str, window: usize, lag: usize) -> Result<String, JsValue> {
    to_js(roc_demo(u64::from(seed), n_series, 120, lambda, alarm, window, lag))
}

#[wasm_bindgen]
pub fn missingness_viewer(seed: u32, days: usize, mcar_rate: f64) -> Result<String, JsValue> {
    to_js(missingness(u64::from(seed), days, mcar_rate))
}
