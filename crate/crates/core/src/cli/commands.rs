//! Pipeline stages. Each stage reads sibling stage directories under the
//! output root and owns exactly one directory of its own.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::config::RunConfig;
use super::manifest::{combined_hash, hash_stage, RunManifest, CONFIG_FILE, MANIFEST_VERSION};
use super::report;
use super::CliError;
use crate::cpd::io::{write_map_csv, write_posterior_dump, write_roc_json, RocRecord};
use crate::cpd::{roc_sweep, ScoredSeries};
use crate::datagen::{
    corrupt_mcar, corrupt_mnar, generate_cohort, prepare, Catalog, Cohort, CohortTruth, Partition, Prepared,
    RobustScalerState, TimeSeriesSample,
};
use crate::downstream::{
    emotion_windows, evaluate_emotion, profile_samples, run_ablation, score_samples, write_ablation_csv,
    write_predictions_csv, EvalSplit, ProfiledSample,
};
use crate::numkernel::checkpoint::write_atomic;
use crate::numkernel::Checkpoint;
use crate::seed::rng_for;
use crate::vqmodel::{reconstruction_metrics, train, write_profile_csv, VqModel};

pub struct Stage {
    pub command: &'static str,
    pub dir: &'static str,
    pub inputs: &'static [&'static str],
}

pub const STAGES: &[Stage] = &[
    Stage { command: "synth", dir: "cohort", inputs: &[] },
    Stage { command: "preprocess", dir: "prepared", inputs: &["cohort"] },
    Stage { command: "train-vq", dir: "model", inputs: &["prepared"] },
    Stage { command: "profile", dir: "profiles", inputs: &["prepared", "model"] },
    Stage { command: "cpd", dir: "cpd", inputs: &["profiles"] },
    Stage { command: "eval-events", dir: "events", inputs: &["cpd"] },
    Stage { command: "emotion", dir: "emotion", inputs: &["prepared", "model"] },
    Stage { command: "ablate", dir: "ablation", inputs: &["prepared"] },
    Stage { command: "report", dir: "report", inputs: &[] },
];

/// Stages run by `all`, in order.
pub const PIPELINE: &[&str] = &["synth", "preprocess", "train-vq", "profile", "cpd", "eval-events", "emotion", "report"];

pub fn stage(command: &str) -> Result<&'static Stage, CliError> {
    STAGES
        .iter()
        .find(|s| s.command == command)
        .ok_or_else(|| CliError::Runtime(format!("unknown command {command}")))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?;
    write_atomic(path, text.as_bytes())?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

/// Runs one stage and writes its config snapshot and manifest.
pub fn execute(command: &str, cfg: &RunConfig) -> Result<RunManifest, CliError> {
    let st = stage(command)?;
    let root = cfg.out_dir.as_path();
    let start = Instant::now();
    let input_dirs: Vec<&str> = if command == "report" {
        report::SOURCES.iter().copied().filter(|d| root.join(d).is_dir()).collect()
    } else {
        st.inputs.to_vec()
    };
    let mut inputs = BTreeMap::new();
    for d in &input_dirs {
        if !root.join(d).is_dir() {
            let producer = STAGES.iter().find(|s| s.dir == *d).map_or("?", |s| s.command);
            return Err(CliError::Runtime(format!(
                "missing input {}; run `{producer}` first",
                root.join(d).display()
            )));
        }
        inputs.extend(hash_stage(root, d)?);
    }
    let out = root.join(st.dir);
    if out.exists() {
        fs::remove_dir_all(&out)?;
    }
    fs::create_dir_all(&out)?;
    write_atomic(&out.join(CONFIG_FILE), cfg.to_toml()?.as_bytes())?;
    info!("{command}: writing {}", out.display());
    let metrics = match command {
        "synth" => synth(cfg, &out)?,
        "preprocess" => preprocess(cfg, &out)?,
        "train-vq" => train_vq(cfg, &out)?,
        "profile" => profile(cfg, &out)?,
        "cpd" => cpd(cfg, &out)?,
        "eval-events" => eval_events(cfg, &out)?,
        "emotion" => emotion(cfg, &out)?,
        "ablate" => ablate(cfg, &out, &inputs)?,
        "report" => report::build(root, &out)?,
        _ => unreachable!("stage table and dispatch agree"),
    };
    let manifest = RunManifest {
        command: command.to_string(),
        version: MANIFEST_VERSION,
        crate_version: env!("CARGO_PKG_VERSION").to_string(),
        seed: cfg.seed,
        config: cfg.clone(),
        inputs,
        outputs: hash_stage(root, st.dir)?,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
        metrics,
    };
    manifest.write(&out)?;
    Ok(manifest)
}

fn synth(cfg: &RunConfig, out: &Path) -> Result<serde_json::Value, CliError> {
    let catalog = Catalog::default_catalog();
    let (samples, truth) = generate_cohort(cfg.seed, &cfg.synth, &catalog)?;
    let cohort = Cohort {
        catalog,
        seed: Some(cfg.seed),
        config: Some(cfg.synth.clone()),
        samples,
        truth: Some(truth),
    };
    cohort.write(out)?;
    let truth = cohort.truth.as_ref().expect("just set");
    let days: usize = cohort.samples.iter().map(|s| s.len()).sum();
    Ok(json!({
        "patients": truth.patients.len(),
        "samples": cohort.samples.len(),
        "days": days,
        "events": truth.patients.iter().map(|p| p.events.len()).sum::<usize>(),
        "change_points": truth.patients.iter().map(|p| p.change_points.len()).sum::<usize>(),
        "labelled_days": truth.patients.iter().map(|p| p.emotions.iter().flatten().count()).sum::<usize>(),
    }))
}

const SPLITS: [&str; 3] = ["train", "validation", "test"];

fn preprocess(cfg: &RunConfig, out: &Path) -> Result<serde_json::Value, CliError> {
    let cohort = Cohort::read(&cfg.out_dir.join("cohort"))?;
    let prepared = prepare(&cohort.samples, &cohort.catalog, &cfg.preprocess, cfg.seed)?;
    for (name, samples) in SPLITS.iter().zip([&prepared.train, &prepared.validation, &prepared.test]) {
        Cohort {
            catalog: cohort.catalog.clone(),
            seed: cohort.seed,
            config: cohort.config.clone(),
            samples: samples.clone(),
            truth: cohort.truth.clone(),
        }
        .write(&out.join(name))?;
    }
    write_json(&out.join("scaler.json"), &prepared.scaler)?;
    write_json(&out.join("partition.json"), &prepared.partition)?;
    Ok(json!({
        "train_samples": prepared.train.len(),
        "validation_samples": prepared.validation.len(),
        "test_samples": prepared.test.len(),
        "train_patients": prepared.partition.train.len(),
        "validation_patients": prepared.partition.validation.len(),
        "test_patients": prepared.partition.test.len(),
    }))
}

pub struct Loaded {
    pub catalog: Catalog,
    pub truth: Option<CohortTruth>,
    pub prepared: Prepared,
}

pub fn load_prepared(root: &Path) -> Result<Loaded, CliError> {
    let dir = root.join("prepared");
    let mut parts: Vec<Cohort> = SPLITS.iter().map(|s| Cohort::read(&dir.join(s))).collect::<Result<_, _>>()?;
    let test = parts.pop().expect("three splits");
    let validation = parts.pop().expect("three splits");
    let train = parts.pop().expect("three splits");
    let scaler: RobustScalerState = read_json(&dir.join("scaler.json"))?;
    let partition: Partition = read_json(&dir.join("partition.json"))?;
    Ok(Loaded {
        catalog: train.catalog,
        truth: train.truth,
        prepared: Prepared {
            partition,
            scaler,
            train: train.samples,
            validation: validation.samples,
            test: test.samples,
        },
    })
}

fn load_model(root: &Path) -> Result<VqModel, CliError> {
    Ok(VqModel::from_checkpoint(&Checkpoint::load(&root.join("model").join("model.json"))?)?)
}

fn train_vq(cfg: &RunConfig, out: &Path) -> Result<serde_json::Value, CliError> {
    let l = load_prepared(&cfg.out_dir)?;
    let sec = &cfg.train_vq;
    let mut model = VqModel::new(sec.model.clone(), l.catalog.binary_flags(), &mut rng_for(cfg.seed, "vq/init"))?;
    let report = train(&mut model, &l.prepared.train, &l.prepared.validation, &sec.train, cfg.seed)?;
    model
        .to_checkpoint(Some(report.optimizer.clone()), json!({ "epochs": report.epochs.len() }))?
        .save(&out.join("model.json"))?;

    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| CliError::Runtime(format!("training.csv: {e}"));
    w.write_record(["epoch", "train_loss", "validation_loss", "lr", "perplexity", "restarted", "max_grad_norm"])
        .map_err(err)?;
    for r in &report.epochs {
        w.write_record([
            r.epoch.to_string(),
            format!("{:?}", r.train_loss),
            r.validation_loss.map(|v| format!("{v:?}")).unwrap_or_default(),
            format!("{:?}", r.lr),
            format!("{:?}", r.perplexity),
            r.restarted.to_string(),
            format!("{:?}", r.max_grad_norm),
        ])
        .map_err(err)?;
    }
    write_atomic(&out.join("training.csv"), &w.into_inner().map_err(|e| CliError::Runtime(e.to_string()))?)?;

    let held: Vec<&TimeSeriesSample> = l.prepared.validation.iter().chain(&l.prepared.test).collect();
    let mcar: Vec<TimeSeriesSample> = held
        .iter()
        .map(|s| corrupt_mcar(s, &l.catalog, &sec.mcar, cfg.seed))
        .collect::<Result<_, _>>()?;
    let mnar: Vec<TimeSeriesSample> = held
        .iter()
        .map(|s| corrupt_mnar(s, &l.catalog, &sec.mnar, cfg.seed))
        .collect::<Result<_, _>>()?;
    let m_mcar = reconstruction_metrics(&model, &mcar, &l.prepared.scaler, &l.catalog)?;
    let m_mnar = reconstruction_metrics(&model, &mnar, &l.prepared.scaler, &l.catalog)?;
    write_json(&out.join("imputation.json"), &json!({ "mcar": m_mcar, "mnar": m_mnar }))?;
    let beats = |ms: &[crate::vqmodel::VariableMetrics], pick: fn(&crate::vqmodel::VariableMetrics) -> (Option<f64>, Option<f64>)| {
        ms.iter().filter(|m| matches!(pick(m), (Some(a), Some(b)) if a < b)).count()
    };
    let last = report.epochs.last();
    Ok(json!({
        "epochs": report.epochs.len(),
        "stopped_early": report.stopped_early,
        "final_train_loss": last.map(|r| r.train_loss),
        "final_validation_loss": last.and_then(|r| r.validation_loss),
        "final_perplexity": last.map(|r| r.perplexity),
        "mcar_variables_beating_median": beats(&m_mcar, |m| (m.mae_mcar, m.baseline_mcar)),
        "mnar_variables_beating_median": beats(&m_mnar, |m| (m.mae_mnar, m.baseline_mnar)),
    }))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProfileIndexEntry {
    pub split: String,
    pub file: String,
    pub sample: ProfiledSample,
}

fn profile(cfg: &RunConfig, out: &Path) -> Result<serde_json::Value, CliError> {
    let l = load_prepared(&cfg.out_dir)?;
    let model = load_model(&cfg.out_dir)?;
    let mut index = Vec::new();
    for (name, samples) in SPLITS.iter().zip([&l.prepared.train, &l.prepared.validation, &l.prepared.test]) {
        for p in profile_samples(&model, samples, l.truth.as_ref(), cfg.profile.profiles)? {
            let file = format!("{}.csv", p.profile.sample);
            write_profile_csv(&out.join(&file), &p.profile)?;
            index.push(ProfileIndexEntry {
                split: name.to_string(),
                file,
                sample: p,
            });
        }
    }
    write_json(&out.join("profiles.json"), &index)?;
    let distinct: Vec<usize> = index.iter().map(|e| e.sample.profile.distinct_codes).collect();
    let dummy_days: usize = index
        .iter()
        .map(|e| e.sample.profile.ids.iter().filter(|&&i| i == e.sample.profile.dummy()).count())
        .sum();
    let days: usize = index.iter().map(|e| e.sample.profile.len()).sum();
    Ok(json!({
        "samples": index.len(),
        "profiles": cfg.profile.profiles,
        "mean_distinct_codes": distinct.iter().sum::<usize>() as f64 / distinct.len().max(1) as f64,
        "dummy_fraction": dummy_days as f64 / days.max(1) as f64,
    }))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LambdaScores {
    pub lambda: f64,
    pub map_file: String,
    pub series: Vec<ScoredSeries>,
}

pub fn lambda_tag(lambda: f64) -> String {
    format!("{lambda:e}")
}

fn cpd(cfg: &RunConfig, out: &Path) -> Result<serde_json::Value, CliError> {
    let index: Vec<ProfileIndexEntry> = read_json(&cfg.out_dir.join("profiles").join("profiles.json"))?;
    let samples: Vec<ProfiledSample> = index
        .into_iter()
        .filter(|e| cfg.cpd.split == EvalSplit::All || e.split == "test")
        .map(|e| e.sample)
        .collect();
    if samples.is_empty() {
        return Err(CliError::Runtime("no profiled samples in the selected split".into()));
    }
    let ev = cfg.event_config();
    let mut all = Vec::new();
    for &lambda in &ev.lambdas {
        let scored = score_samples(&samples, lambda, &ev, cfg.seed)?;
        let map_file = format!("map_lambda_{}.csv", lambda_tag(lambda));
        let rows: Vec<_> = scored.iter().map(|(s, p)| (s.id.clone(), p, s.scores.clone())).collect();
        write_map_csv(&out.join(&map_file), &rows)?;
        if cfg.cpd.write_posteriors {
            let dir = out.join("posteriors");
            fs::create_dir_all(&dir)?;
            for (s, p) in &scored {
                write_posterior_dump(&dir.join(format!("{}_lambda_{}.bin", s.id, lambda_tag(lambda))), p)?;
            }
        }
        all.push(LambdaScores {
            lambda,
            map_file,
            series: scored.into_iter().map(|(s, _)| s).collect(),
        });
    }
    write_json(&out.join("scores.json"), &all)?;
    Ok(json!({
        "sequences": samples.len(),
        "lambdas": ev.lambdas,
        "events": samples.iter().map(|s| s.events.len()).sum::<usize>(),
        "method": ev.alarm.method.name(),
    }))
}

fn eval_events(cfg: &RunConfig, out: &Path) -> Result<serde_json::Value, CliError> {
    let scores: Vec<LambdaScores> = read_json(&cfg.out_dir.join("cpd").join("scores.json"))?;
    let window = cfg.evaluation_window();
    let alarm = &cfg.cpd.alarm;
    let mut records = Vec::new();
    for ls in &scores {
        let roc = roc_sweep(&ls.series, alarm.direction(), cfg.eval_events.thresholds.as_deref(), window)?;
        records.push(RocRecord {
            lambda: ls.lambda,
            method: alarm.method.name().to_string(),
            window,
            grid: if cfg.eval_events.thresholds.is_some() { "explicit" } else { "scores" }.to_string(),
            roc,
        });
    }
    write_roc_json(&out.join("roc.json"), &records)?;
    let per: Vec<serde_json::Value> = records.iter().map(|r| json!({ "lambda": r.lambda, "auc": r.roc.auc })).collect();
    let mean = records.iter().map(|r| r.roc.auc).sum::<f64>() / records.len().max(1) as f64;
    let summary = json!({ "method": alarm.method.name(), "window": window, "per_lambda": per, "mean_auc": mean });
    write_json(&out.join("auc.json"), &summary)?;
    Ok(summary)
}

fn emotion(cfg: &RunConfig, out: &Path) -> Result<serde_json::Value, CliError> {
    let l = load_prepared(&cfg.out_dir)?;
    let truth = l.truth.as_ref().ok_or_else(|| CliError::Runtime("cohort has no emotion labels".into()))?;
    let model = load_model(&cfg.out_dir)?;
    let sec = &cfg.emotion;
    let tr = profile_samples(&model, &l.prepared.train, Some(truth), sec.profiles)?;
    let te = profile_samples(&model, &l.prepared.test, Some(truth), sec.profiles)?;
    let train_w = emotion_windows(&tr, truth, &model.codebook, sec.embedding)?;
    let test_w = emotion_windows(&te, truth, &model.codebook, sec.embedding)?;
    let outcome = evaluate_emotion(&train_w, &test_w, &sec.classifier, cfg.seed)?;
    write_predictions_csv(&out.join("predictions.csv"), &test_w, &outcome.predictions)?;
    outcome.model.to_checkpoint()?.save(&out.join("classifier.json"))?;
    let metrics = json!({
        "weighted_auc": outcome.weighted_auc,
        "train_windows": train_w.len(),
        "test_windows": test_w.len(),
        "epochs": outcome.report.epochs.len(),
        "best_epoch": outcome.report.best_epoch,
        "stopped_early": outcome.report.stopped_early,
    });
    write_json(&out.join("metrics.json"), &json!({ "summary": metrics, "report": outcome.report }))?;
    Ok(metrics)
}

fn ablate(cfg: &RunConfig, out: &Path, inputs: &BTreeMap<String, String>) -> Result<serde_json::Value, CliError> {
    let l = load_prepared(&cfg.out_dir)?;
    let truth = l.truth.as_ref().ok_or_else(|| CliError::Runtime("cohort has no ground truth".into()))?;
    let mut grid = cfg.ablate.clone();
    if grid.checkpoint_dir.is_none() {
        let dir = out.join("checkpoints");
        fs::create_dir_all(&dir)?;
        grid.checkpoint_dir = Some(dir);
    }
    let cells = run_ablation(&grid, &l.prepared, truth, &l.catalog.binary_flags(), &combined_hash(inputs))?;
    write_ablation_csv(&out.join("cells.csv"), &cells)?;
    write_json(&out.join("cells.json"), &cells)?;
    Ok(json!({
        "cells": cells.len(),
        "event_auc": cells.iter().map(|c| json!({
            "embedding_dim": c.embedding_dim, "codebook_size": c.codebook_size, "seed": c.seed, "auc": c.event_auc
        })).collect::<Vec<_>>(),
    }))
}

#[derive(Clone, Debug, Serialize)]
pub struct ReplayOutcome {
    pub stage: String,
    pub pass: bool,
    pub mismatches: Vec<String>,
}

/// Re-executes a stage from its manifest in a scratch root seeded with the
/// recorded inputs, then compares output hashes.
pub fn replay_stage(root: &Path, stage_dir: &str) -> Result<ReplayOutcome, CliError> {
    let manifest = RunManifest::read(&root.join(stage_dir))?;
    let scratch = tempfile::tempdir()?;
    let mut mismatches = Vec::new();
    for (rel, hash) in &manifest.inputs {
        let src = root.join(rel);
        match super::manifest::sha256_file(&src) {
            Ok(h) if &h == hash => {}
            Ok(_) => mismatches.push(format!("input {rel} changed since the run")),
            Err(_) => mismatches.push(format!("input {rel} is missing")),
        }
        let dst = scratch.path().join(rel);
        if let Some(p) = dst.parent() {
            fs::create_dir_all(p)?;
        }
        if src.exists() {
            fs::copy(&src, &dst)?;
        }
    }
    let mut cfg = manifest.config.clone();
    cfg.out_dir = scratch.path().to_path_buf();
    let again = execute(&manifest.command, &cfg)?;
    let snapshot = format!("{stage_dir}/{CONFIG_FILE}");
    let keys: std::collections::BTreeSet<&String> = manifest.outputs.keys().chain(again.outputs.keys()).collect();
    for k in keys {
        if *k == snapshot {
            continue;
        }
        match (manifest.outputs.get(k), again.outputs.get(k)) {
            (Some(a), Some(b)) if a == b => {}
            (Some(_), Some(_)) => mismatches.push(format!("{k} differs")),
            (Some(_), None) => mismatches.push(format!("{k} not reproduced")),
            (None, _) => mismatches.push(format!("{k} is new")),
        }
    }
    if manifest.metrics != again.metrics {
        mismatches.push("metrics differ".into());
    }
    Ok(ReplayOutcome {
        stage: stage_dir.to_string(),
        pass: mismatches.is_empty(),
        mismatches,
    })
}

/// `dir` is either a stage directory or an output root holding several.
pub fn replay(dir: &Path) -> Result<Vec<ReplayOutcome>, CliError> {
    if dir.join(super::manifest::MANIFEST_FILE).is_file() {
        let name = dir
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| CliError::Runtime(format!("{} has no stage name", dir.display())))?;
        let root: PathBuf = dir.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf);
        return Ok(vec![replay_stage(&root, name)?]);
    }
    let found: Vec<&Stage> = STAGES
        .iter()
        .filter(|s| dir.join(s.dir).join(super::manifest::MANIFEST_FILE).is_file())
        .collect();
    if found.is_empty() {
        return Err(CliError::Runtime(format!("no manifests under {}", dir.display())));
    }
    found.iter().map(|s| replay_stage(dir, s.dir)).collect()
}
