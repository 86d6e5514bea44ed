//! On-disk cohort: one CSV per sample plus a JSON manifest.
//!
//! Sample CSV columns are `day`, one column per variable, then
//! `mask_<variable>` per variable. Missing values are empty cells.

use std::fs;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::catalog::Catalog;
use super::generate::{CohortConfig, CohortTruth};
use super::sample::{Corruption, Space, TimeSeriesSample, MISSING};
use super::DataError;
use crate::numkernel::checkpoint::write_atomic;

pub const MANIFEST_FILE: &str = "cohort.json";
pub const EVENTS_FILE: &str = "events.csv";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleEntry {
    pub file: String,
    pub patient_id: String,
    pub segment: usize,
    pub start_date: NaiveDate,
    pub space: Space,
    pub corruption: Option<Corruption>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CohortManifest {
    pub catalog: Catalog,
    pub seed: Option<u64>,
    pub config: Option<CohortConfig>,
    pub samples: Vec<SampleEntry>,
    pub truth: Option<CohortTruth>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Cohort {
    pub catalog: Catalog,
    pub seed: Option<u64>,
    pub config: Option<CohortConfig>,
    pub samples: Vec<TimeSeriesSample>,
    pub truth: Option<CohortTruth>,
}

fn csv_err(path: &Path, e: impl std::fmt::Display) -> DataError {
    DataError::Format(format!("{}: {e}", path.display()))
}

pub fn write_sample_csv(path: &Path, sample: &TimeSeriesSample, catalog: &Catalog) -> Result<(), DataError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["day".to_string()];
    header.extend(catalog.names());
    header.extend(catalog.names().iter().map(|n| format!("mask_{n}")));
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for t in 0..sample.len() {
        let mut row = vec![sample.days[t].to_string()];
        for f in 0..sample.n_vars() {
            let v = sample.values[f][t];
            row.push(if sample.mask[f][t] == MISSING || !v.is_finite() {
                String::new()
            } else {
                format!("{v:?}")
            });
        }
        for f in 0..sample.n_vars() {
            row.push(sample.mask[f][t].to_string());
        }
        w.write_record(&row).map_err(|e| csv_err(path, e))?;
    }
    let bytes = w.into_inner().map_err(|e| csv_err(path, e))?;
    write_atomic(path, &bytes)?;
    Ok(())
}

pub fn read_sample_csv(path: &Path, entry: &SampleEntry, catalog: &Catalog) -> Result<TimeSeriesSample, DataError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let header: Vec<String> = r.headers().map_err(|e| csv_err(path, e))?.iter().map(String::from).collect();
    let n = catalog.len();
    let mut expected = vec!["day".to_string()];
    expected.extend(catalog.names());
    expected.extend(catalog.names().iter().map(|c| format!("mask_{c}")));
    if header != expected {
        return Err(DataError::CatalogMismatch(format!(
            "{}: columns {header:?} do not match the catalog",
            path.display()
        )));
    }
    let sentinel = match entry.space {
        Space::Original => f64::NAN,
        Space::Scaled => 0.0,
    };
    let mut days = Vec::new();
    let mut values = vec![Vec::new(); n];
    let mut mask = vec![Vec::new(); n];
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let at = |what: &str| csv_err(path, format!("row {}: bad {what}", line + 2));
        days.push(rec[0].parse::<u32>().map_err(|_| at("day"))?);
        for f in 0..n {
            let code: u8 = rec[1 + n + f].parse().map_err(|_| at("mask code"))?;
            let cell = rec[1 + f].trim();
            let v = if cell.is_empty() {
                sentinel
            } else {
                cell.parse::<f64>().map_err(|_| at(&catalog.variables[f].name))?
            };
            values[f].push(v);
            mask[f].push(code);
        }
    }
    let sample = TimeSeriesSample {
        patient_id: entry.patient_id.clone(),
        segment: entry.segment,
        start_date: entry.start_date,
        days,
        values,
        mask,
        space: entry.space,
        corruption: entry.corruption,
    };
    sample.validate()?;
    Ok(sample)
}

impl Cohort {
    pub fn manifest_path(dir: &Path) -> PathBuf {
        dir.join(MANIFEST_FILE)
    }

    pub fn write(&self, dir: &Path) -> Result<(), DataError> {
        fs::create_dir_all(dir)?;
        let mut entries = Vec::with_capacity(self.samples.len());
        for s in &self.samples {
            let file = format!("{}.csv", s.key());
            write_sample_csv(&dir.join(&file), s, &self.catalog)?;
            entries.push(SampleEntry {
                file,
                patient_id: s.patient_id.clone(),
                segment: s.segment,
                start_date: s.start_date,
                space: s.space,
                corruption: s.corruption,
            });
        }
        if let Some(truth) = &self.truth {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(["patient_id", "day"]).map_err(|e| csv_err(dir, e))?;
            for p in &truth.patients {
                for e in &p.events {
                    w.write_record([p.patient_id.clone(), e.to_string()]).map_err(|e| csv_err(dir, e))?;
                }
            }
            write_atomic(&dir.join(EVENTS_FILE), &w.into_inner().map_err(|e| csv_err(dir, e))?)?;
        }
        let manifest = CohortManifest {
            catalog: self.catalog.clone(),
            seed: self.seed,
            config: self.config.clone(),
            samples: entries,
            truth: self.truth.clone(),
        };
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| DataError::Format(e.to_string()))?;
        write_atomic(&Self::manifest_path(dir), text.as_bytes())?;
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Self, DataError> {
        let path = Self::manifest_path(dir);
        let text = fs::read_to_string(&path).map_err(|e| DataError::Format(format!("{}: {e}", path.display())))?;
        let m: CohortManifest = serde_json::from_str(&text).map_err(|e| csv_err(&path, e))?;
        m.catalog.validate()?;
        let samples = m
            .samples
            .iter()
            .map(|e| read_sample_csv(&dir.join(&e.file), e, &m.catalog))
            .collect::<Result<_, _>>()?;
        Ok(Self {
            catalog: m.catalog,
            seed: m.seed,
            config: m.config,
            samples,
            truth: m.truth,
        })
    }
}

/// Reads `patient_id,day` rows.
pub fn read_events_csv(path: &Path) -> Result<Vec<(String, u32)>, DataError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    r.records()
        .map(|rec| {
            let rec = rec.map_err(|e| csv_err(path, e))?;
            let day = rec
                .get(1)
                .and_then(|d| d.parse().ok())
                .ok_or_else(|| csv_err(path, "bad day"))?;
            Ok((rec[0].to_string(), day))
        })
        .collect()
}
