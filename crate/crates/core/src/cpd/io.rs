//! MAP run-length CSV, ROC JSON and dense posterior dumps.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::detector::RunLengthPosterior;
use super::evaluate::RocCurve;
use super::CpdError;
use crate::numkernel::checkpoint::{write_atomic, write_dump};

fn csv_err(e: impl std::fmt::Display) -> CpdError {
    CpdError::InvalidInput(format!("csv: {e}"))
}

/// Columns `sequence,day,map_run_length,score`; one row per day.
pub fn write_map_csv(path: &Path, rows: &[(String, &RunLengthPosterior, Vec<f64>)]) -> Result<(), CpdError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["sequence", "day", "map_run_length", "score"]).map_err(csv_err)?;
    for (id, post, scores) in rows {
        for (day, &r) in post.map.iter().enumerate() {
            let score = scores.get(day).map(|s| format!("{s:?}")).unwrap_or_default();
            w.write_record([id.clone(), day.to_string(), r.to_string(), score]).map_err(csv_err)?;
        }
    }
    write_atomic(path, &w.into_inner().map_err(csv_err)?)?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocRecord {
    pub lambda: f64,
    pub method: String,
    pub window: usize,
    pub grid: String,
    pub roc: RocCurve,
}

pub fn write_roc_json(path: &Path, records: &[RocRecord]) -> Result<(), CpdError> {
    let text = serde_json::to_string_pretty(records).map_err(|e| CpdError::InvalidInput(e.to_string()))?;
    write_atomic(path, text.as_bytes())?;
    Ok(())
}

/// Dense `T x (T+1)` matrix in the versioned binary dump format.
pub fn write_posterior_dump(path: &Path, post: &RunLengthPosterior) -> Result<(), CpdError> {
    write_dump(path, post.len(), post.len() + 1, &post.to_dense())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cpd::detector::{run_with, Hazard};
    use crate::cpd::models::Categorical;
    use crate::numkernel::checkpoint::read_dump;

    #[test]
    fn dump_and_csv_have_one_entry_per_day() {
        let p = run_with(Categorical::new(3, 1.0), &[0, 1, 2, 2, 1], Hazard::new(10.0).unwrap(), None).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_posterior_dump(&dir.path().join("p.bin"), &p).unwrap();
        let (r, c, data) = read_dump(&dir.path().join("p.bin")).unwrap();
        assert_eq!((r, c), (5, 6));
        assert_eq!(data, p.to_dense());
        write_map_csv(&dir.path().join("m.csv"), &[("s".into(), &p, vec![1.0; 5])]).unwrap();
        let text = std::fs::read_to_string(dir.path().join("m.csv")).unwrap();
        assert_eq!(text.lines().count(), 6);
    }
}
