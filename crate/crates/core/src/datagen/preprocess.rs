use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::catalog::Catalog;
use super::sample::{Space, TimeSeriesSample, MISSING, OBSERVED};
use super::DataError;
use crate::seed::rng_for;

/// Marks observed values outside their variable's bounds as missing.
pub fn clip_and_flag(sample: &TimeSeriesSample, catalog: &Catalog) -> Result<TimeSeriesSample, DataError> {
    check_catalog(sample, catalog)?;
    let mut out = sample.clone();
    let sentinel = out.sentinel();
    for (f, spec) in catalog.variables.iter().enumerate() {
        for t in 0..out.len() {
            if out.mask[f][t] != MISSING && !spec.in_bounds(out.values[f][t]) {
                out.mask[f][t] = MISSING;
                out.values[f][t] = sentinel;
            }
        }
    }
    Ok(out)
}

/// Splits wherever consecutive day indices are not adjacent and drops
/// pieces shorter than `min_length`.
pub fn split_on_gaps(sample: &TimeSeriesSample, min_length: usize) -> Vec<TimeSeriesSample> {
    let mut pieces = Vec::new();
    let mut start = 0;
    for i in 1..=sample.len() {
        if i == sample.len() || sample.days[i] != sample.days[i - 1] + 1 {
            if i - start >= min_length.max(1) {
                pieces.push(start..i);
            }
            start = i;
        }
    }
    pieces
        .into_iter()
        .enumerate()
        .map(|(k, r)| sample.slice(r, k))
        .collect()
}

fn check_catalog(sample: &TimeSeriesSample, catalog: &Catalog) -> Result<(), DataError> {
    if sample.n_vars() != catalog.len() {
        return Err(DataError::CatalogMismatch(format!(
            "{} has {} variables, catalog has {}",
            sample.key(),
            sample.n_vars(),
            catalog.len()
        )));
    }
    sample.validate()
}

/// Quantile with linear interpolation between order statistics.
///
/// `sorted` must be ascending and non-empty.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn sorted_finite(values: impl IntoIterator<Item = f64>) -> Vec<f64> {
    let mut v: Vec<f64> = values.into_iter().filter(|x| x.is_finite()).collect();
    v.sort_by(f64::total_cmp);
    v
}

/// Per-variable median and interquartile range.
///
/// Binary variables are passed through unchanged (`scaled == false`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustScalerState {
    pub variables: Vec<String>,
    pub median: Vec<f64>,
    pub iqr: Vec<f64>,
    pub scaled: Vec<bool>,
}

impl RobustScalerState {
    pub fn forward(&self, f: usize, v: f64) -> f64 {
        if self.scaled[f] {
            (v - self.median[f]) / self.iqr[f]
        } else {
            v
        }
    }

    pub fn inverse(&self, f: usize, v: f64) -> f64 {
        if self.scaled[f] {
            v * self.iqr[f] + self.median[f]
        } else {
            v
        }
    }

    fn check(&self, sample: &TimeSeriesSample, catalog: &Catalog) -> Result<(), DataError> {
        if self.variables != catalog.names() {
            return Err(DataError::CatalogMismatch(
                "scaler was fitted on a different variable catalog".into(),
            ));
        }
        check_catalog(sample, catalog)
    }
}

/// Fits on observed entries (mask 1) of the training samples only.
///
/// A zero IQR is replaced by 1 so constant variables map to 0.
pub fn fit_scaler(train: &[TimeSeriesSample], catalog: &Catalog) -> Result<RobustScalerState, DataError> {
    let mut state = RobustScalerState {
        variables: catalog.names(),
        median: vec![0.0; catalog.len()],
        iqr: vec![1.0; catalog.len()],
        scaled: catalog.binary_flags().iter().map(|b| !b).collect(),
    };
    for s in train {
        check_catalog(s, catalog)?;
        if s.space != Space::Original {
            return Err(DataError::WrongSpace(format!("{} is already scaled", s.key())));
        }
    }
    for f in 0..catalog.len() {
        if !state.scaled[f] {
            continue;
        }
        let obs = sorted_finite(
            train
                .iter()
                .flat_map(|s| (0..s.len()).filter(move |&t| s.mask[f][t] == OBSERVED).map(move |t| s.values[f][t])),
        );
        if obs.is_empty() {
            continue;
        }
        state.median[f] = quantile_sorted(&obs, 0.5);
        let iqr = quantile_sorted(&obs, 0.75) - quantile_sorted(&obs, 0.25);
        state.iqr[f] = if iqr > 0.0 { iqr } else { 1.0 };
    }
    Ok(state)
}

/// Scales every non-missing entry; missing entries become the scaled sentinel 0.
pub fn apply_scaler(
    sample: &TimeSeriesSample,
    state: &RobustScalerState,
    catalog: &Catalog,
) -> Result<TimeSeriesSample, DataError> {
    state.check(sample, catalog)?;
    if sample.space != Space::Original {
        return Err(DataError::WrongSpace(format!("{} is already scaled", sample.key())));
    }
    let mut out = sample.clone();
    out.space = Space::Scaled;
    for f in 0..out.n_vars() {
        for t in 0..out.len() {
            out.values[f][t] = if out.mask[f][t] == MISSING {
                0.0
            } else {
                state.forward(f, out.values[f][t])
            };
        }
    }
    Ok(out)
}

pub fn invert_scaler(
    sample: &TimeSeriesSample,
    state: &RobustScalerState,
    catalog: &Catalog,
) -> Result<TimeSeriesSample, DataError> {
    state.check(sample, catalog)?;
    if sample.space != Space::Scaled {
        return Err(DataError::WrongSpace(format!("{} is not in scaled space", sample.key())));
    }
    let mut out = sample.clone();
    out.space = Space::Original;
    for f in 0..out.n_vars() {
        for t in 0..out.len() {
            out.values[f][t] = if out.mask[f][t] == MISSING {
                f64::NAN
            } else {
                state.inverse(f, out.values[f][t])
            };
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
}

impl Partition {
    pub fn role_of(&self, patient_id: &str) -> Option<&'static str> {
        let has = |v: &[String]| v.iter().any(|p| p == patient_id);
        if has(&self.train) {
            Some("train")
        } else if has(&self.validation) {
            Some("validation")
        } else if has(&self.test) {
            Some("test")
        } else {
            None
        }
    }
}

/// Patient-level split with `fractions = (train, validation)`; the rest is test.
///
/// Every split receives at least one patient when enough patients exist.
pub fn partition_patients(patient_ids: &[String], fractions: (f64, f64), seed: u64) -> Result<Partition, DataError> {
    let (ft, fv) = fractions;
    if !(ft > 0.0 && fv >= 0.0 && ft + fv <= 1.0) {
        return Err(DataError::InvalidConfig(format!("invalid partition fractions ({ft}, {fv})")));
    }
    let mut ids: Vec<String> = patient_ids.to_vec();
    ids.sort();
    ids.dedup();
    ids.shuffle(&mut rng_for(seed, "partition"));
    let n = ids.len();
    let mut n_train = ((n as f64) * ft).round() as usize;
    let mut n_val = ((n as f64) * fv).round() as usize;
    let wants_test = ft + fv < 1.0;
    if n >= 3 {
        n_train = n_train.clamp(1, n - 1 - usize::from(wants_test));
        if fv > 0.0 {
            n_val = n_val.clamp(1, n - n_train - usize::from(wants_test));
        }
    }
    n_train = n_train.min(n);
    n_val = n_val.min(n - n_train);
    let test = ids.split_off(n_train + n_val);
    let validation = ids.split_off(n_train);
    Ok(Partition {
        train: ids,
        validation,
        test,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PrepareConfig {
    pub min_length: usize,
    pub train_fraction: f64,
    pub validation_fraction: f64,
}

impl Default for PrepareConfig {
    fn default() -> Self {
        Self {
            min_length: 28,
            train_fraction: 0.7,
            validation_fraction: 0.15,
        }
    }
}

/// Scaled, partitioned samples ready for training.
#[derive(Clone, Debug, PartialEq)]
pub struct Prepared {
    pub partition: Partition,
    pub scaler: RobustScalerState,
    pub train: Vec<TimeSeriesSample>,
    pub validation: Vec<TimeSeriesSample>,
    pub test: Vec<TimeSeriesSample>,
}

impl Prepared {
    pub fn all(&self) -> impl Iterator<Item = &TimeSeriesSample> {
        self.train.iter().chain(&self.validation).chain(&self.test)
    }
}

/// Clip, split on gaps, partition by patient, fit the scaler on the
/// training split and scale every split.
pub fn prepare(
    raw: &[TimeSeriesSample],
    catalog: &Catalog,
    cfg: &PrepareConfig,
    seed: u64,
) -> Result<Prepared, DataError> {
    let mut pieces = Vec::new();
    for s in raw {
        pieces.extend(split_on_gaps(&clip_and_flag(s, catalog)?, cfg.min_length));
    }
    let ids: Vec<String> = pieces.iter().map(|s| s.patient_id.clone()).collect();
    let partition = partition_patients(&ids, (cfg.train_fraction, cfg.validation_fraction), seed)?;
    let pick = |names: &[String]| -> Vec<TimeSeriesSample> {
        pieces.iter().filter(|s| names.contains(&s.patient_id)).cloned().collect()
    };
    let (train, validation, test) = (pick(&partition.train), pick(&partition.validation), pick(&partition.test));
    let scaler = fit_scaler(&train, catalog)?;
    let scale = |v: Vec<TimeSeriesSample>| -> Result<Vec<TimeSeriesSample>, DataError> {
        v.iter().map(|s| apply_scaler(s, &scaler, catalog)).collect()
    };
    Ok(Prepared {
        train: scale(train)?,
        validation: scale(validation)?,
        test: scale(test)?,
        partition,
        scaler,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;

    fn sample_with(values: Vec<Vec<f64>>, days: Vec<u32>) -> TimeSeriesSample {
        let mask = values
            .iter()
            .map(|row| row.iter().map(|v| if v.is_nan() { MISSING } else { OBSERVED }).collect())
            .collect();
        TimeSeriesSample {
            patient_id: "p000".into(),
            segment: 0,
            start_date: NaiveDate::from_ymd_opt(2019, 3, 15).unwrap(),
            days,
            values,
            mask,
            space: Space::Original,
            corruption: None,
        }
    }

    fn one_var(name: &str) -> Catalog {
        let mut c = Catalog::default_catalog();
        let i = c.index_of(name).unwrap();
        c.variables = vec![c.variables[i].clone()];
        c
    }

    #[test]
    fn clip_flags_out_of_bounds_only() {
        let cat = one_var("total_steps");
        let s = sample_with(vec![vec![100.0, 150.0, 9_000.0, 25_001.0]], (0..4).collect());
        let c = clip_and_flag(&s, &cat).unwrap();
        assert_eq!(c.mask[0], vec![MISSING, OBSERVED, OBSERVED, MISSING]);
        assert!(c.values[0][0].is_nan());
        assert_eq!(c.values[0][2], 9_000.0);

        let cat = one_var("sleep_start");
        let s = sample_with(vec![vec![30_000.0]], vec![0]);
        assert_eq!(clip_and_flag(&s, &cat).unwrap().mask[0], vec![MISSING]);

        let cat = one_var("distance");
        let s = sample_with(vec![vec![500.0]], vec![0]);
        assert_eq!(clip_and_flag(&s, &cat).unwrap(), s);
    }

    #[test]
    fn gap_split_follows_calendar() {
        // Mar 15 .. May 2 (49 days), then May 15 .. Jun 24 (41 days)
        let first: Vec<u32> = (0..49).collect();
        let second: Vec<u32> = (61..102).collect();
        let days: Vec<u32> = first.iter().chain(&second).copied().collect();
        let s = sample_with(vec![vec![1.0; days.len()]], days);
        let parts = split_on_gaps(&s, 7);
        assert_eq!(parts.len(), 2);
        assert_eq!(parts[0].len(), 49);
        assert_eq!(parts[1].days[0], 61);
        let start = NaiveDate::from_ymd_opt(2019, 3, 15).unwrap();
        assert_eq!(start + chrono::Days::new(48), NaiveDate::from_ymd_opt(2019, 5, 2).unwrap());
        assert_eq!(start + chrono::Days::new(61), NaiveDate::from_ymd_opt(2019, 5, 15).unwrap());

        let s = sample_with(vec![vec![1.0; 60]], (0..60).collect());
        assert_eq!(split_on_gaps(&s, 7).len(), 1);
        let s = sample_with(vec![vec![1.0; 3]], (0..3).collect());
        assert!(split_on_gaps(&s, 7).is_empty());
    }

    #[test]
    fn scaler_uses_median_and_iqr() {
        let cat = one_var("distance");
        let s = sample_with(vec![vec![1.0, 2.0, 3.0, 4.0, 5.0]], (0..5).collect());
        let st = fit_scaler(std::slice::from_ref(&s), &cat).unwrap();
        assert_eq!((st.median[0], st.iqr[0]), (3.0, 2.0));
        let scaled = apply_scaler(&s, &st, &cat).unwrap();
        assert_eq!(scaled.values[0][2], 0.0);
        assert_eq!(scaled.values[0][4], 1.0);
        let back = invert_scaler(&scaled, &st, &cat).unwrap();
        for (a, b) in back.values[0].iter().zip(&s.values[0]) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn constant_variable_guarded() {
        let cat = one_var("distance");
        let s = sample_with(vec![vec![7.0; 4]], (0..4).collect());
        let st = fit_scaler(std::slice::from_ref(&s), &cat).unwrap();
        assert_eq!(st.iqr[0], 1.0);
        assert!(apply_scaler(&s, &st, &cat).unwrap().values[0].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scaler_rejects_other_catalog() {
        let s = sample_with(vec![vec![1.0, 2.0]], vec![0, 1]);
        let st = fit_scaler(std::slice::from_ref(&s), &one_var("distance")).unwrap();
        assert!(matches!(
            apply_scaler(&s, &st, &one_var("app_usage")),
            Err(DataError::CatalogMismatch(_))
        ));
    }

    #[test]
    fn partition_is_patient_disjoint() {
        let ids: Vec<String> = (0..20).map(|i| format!("p{i:03}")).collect();
        let p = partition_patients(&ids, (0.6, 0.2), 9).unwrap();
        assert_eq!(p.train.len() + p.validation.len() + p.test.len(), 20);
        for id in &p.train {
            assert!(!p.validation.contains(id) && !p.test.contains(id));
        }
        assert!(!p.test.is_empty() && !p.validation.is_empty());
    }
}
