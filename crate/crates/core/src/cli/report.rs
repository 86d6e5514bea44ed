//! Consolidated plot-ready tables from whatever stage outputs exist.

use std::path::Path;

use serde_json::json;

use super::commands::LambdaScores;
use super::CliError;
use crate::cpd::io::RocRecord;
use crate::downstream::AblationCell;
use crate::numkernel::checkpoint::write_atomic;

/// Stage directories the report draws on.
pub const SOURCES: &[&str] = &["model", "cpd", "events", "emotion", "ablation"];

fn csv_bytes(header: &[&str], rows: Vec<Vec<String>>) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| CliError::Runtime(format!("csv: {e}"));
    w.write_record(header).map_err(err)?;
    for r in rows {
        w.write_record(&r).map_err(err)?;
    }
    w.into_inner().map_err(|e| CliError::Runtime(e.to_string()))
}

fn read_json<T: for<'de> serde::Deserialize<'de>>(path: &Path) -> Option<T> {
    serde_json::from_str(&std::fs::read_to_string(path).ok()?).ok()
}

/// ROC points sorted by false-positive rate within each hazard rate.
pub fn roc_rows(records: &[RocRecord]) -> Vec<Vec<String>> {
    let mut rows = Vec::new();
    for r in records {
        let mut pts: Vec<_> = r.roc.points.iter().collect();
        pts.sort_by(|a, b| a.fpr.total_cmp(&b.fpr).then(a.sensitivity.total_cmp(&b.sensitivity)));
        for p in pts {
            rows.push(vec![
                format!("{:?}", r.lambda),
                r.method.clone(),
                format!("{:?}", p.threshold),
                format!("{:?}", p.fpr),
                format!("{:?}", p.sensitivity),
            ]);
        }
    }
    rows
}

pub fn build(root: &Path, out: &Path) -> Result<serde_json::Value, CliError> {
    let mut written = Vec::new();
    let mut missing = Vec::new();

    match read_json::<Vec<RocRecord>>(&root.join("events/roc.json")) {
        Some(records) => {
            let bytes = csv_bytes(&["lambda", "method", "threshold", "fpr", "sensitivity"], roc_rows(&records))?;
            write_atomic(&out.join("roc_points.csv"), &bytes)?;
            let rows = records
                .iter()
                .map(|r| vec![format!("{:?}", r.lambda), r.method.clone(), r.window.to_string(), format!("{:?}", r.roc.auc)])
                .collect();
            write_atomic(&out.join("auc.csv"), &csv_bytes(&["lambda", "method", "window", "auc"], rows)?)?;
            written.extend(["roc_points.csv", "auc.csv"]);
        }
        None => missing.push("events/roc.json"),
    }

    match read_json::<Vec<LambdaScores>>(&root.join("cpd/scores.json")) {
        Some(scores) => {
            let mut rows = Vec::new();
            for ls in &scores {
                let mut r = csv::Reader::from_path(root.join("cpd").join(&ls.map_file))
                    .map_err(|e| CliError::Runtime(format!("{}: {e}", ls.map_file)))?;
                for rec in r.records() {
                    let rec = rec.map_err(|e| CliError::Runtime(format!("{}: {e}", ls.map_file)))?;
                    let mut row = vec![format!("{:?}", ls.lambda)];
                    row.extend(rec.iter().map(str::to_string));
                    let event = ls
                        .series
                        .iter()
                        .find(|s| Some(s.id.as_str()) == rec.get(0))
                        .zip(rec.get(1).and_then(|d| d.parse::<usize>().ok()))
                        .is_some_and(|(s, d)| s.events.contains(&d));
                    row.push(u8::from(event).to_string());
                    rows.push(row);
                }
            }
            let bytes = csv_bytes(&["lambda", "sequence", "day", "map_run_length", "score", "event"], rows)?;
            write_atomic(&out.join("run_length.csv"), &bytes)?;
            written.push("run_length.csv");
        }
        None => missing.push("cpd/scores.json"),
    }

    match read_json::<Vec<AblationCell>>(&root.join("ablation/cells.json")) {
        Some(cells) => {
            let rows = cells
                .iter()
                .flat_map(|c| {
                    c.lambdas.iter().zip(&c.event_auc_per_lambda).map(move |(l, a)| {
                        vec![
                            c.variant.name().to_string(),
                            c.embedding_dim.to_string(),
                            c.codebook_size.to_string(),
                            c.seed.to_string(),
                            format!("{l:?}"),
                            format!("{a:?}"),
                            format!("{:?}", c.event_auc),
                            c.emotion_auc.map(|e| format!("{e:?}")).unwrap_or_default(),
                        ]
                    })
                })
                .collect();
            let header =
                ["variant", "embedding_dim", "codebook_size", "seed", "lambda", "event_auc", "mean_event_auc", "emotion_auc"];
            write_atomic(&out.join("ablation_grid.csv"), &csv_bytes(&header, rows)?)?;
            written.push("ablation_grid.csv");
        }
        None => missing.push("ablation/cells.json"),
    }

    if root.join("model/training.csv").is_file() {
        std::fs::copy(root.join("model/training.csv"), out.join("training.csv"))?;
        written.push("training.csv");
    } else {
        missing.push("model/training.csv");
    }

    let emotion: Option<serde_json::Value> = read_json(&root.join("emotion/metrics.json"));
    if emotion.is_none() {
        missing.push("emotion/metrics.json");
    }
    let events: Option<serde_json::Value> = read_json(&root.join("events/auc.json"));
    let summary = json!({
        "written": written,
        "missing": missing,
        "event_auc": events.as_ref().and_then(|e| e.get("mean_auc").cloned()),
        "emotion_weighted_auc": emotion.as_ref().and_then(|e| e.pointer("/summary/weighted_auc").cloned()),
    });
    let text = serde_json::to_string_pretty(&summary).map_err(|e| CliError::Runtime(e.to_string()))?;
    write_atomic(&out.join("summary.json"), text.as_bytes())?;
    Ok(summary)
}
