//! Synthetic cohort: a hidden semi-Markov regime process per patient drives
//! regime-specific emissions, natural missingness, events and emotion labels.

use chrono::{Datelike, Days, NaiveDate, Weekday};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use super::catalog::{Catalog, ValueType, VariableSpec};
use super::sample::{Space, TimeSeriesSample, MISSING, OBSERVED};
use super::DataError;
use crate::numkernel::KernelRng;
use crate::seed::rng_for;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CohortConfig {
    pub n_patients: usize,
    pub min_length: usize,
    pub max_length: usize,
    pub n_regimes: usize,
    /// Per-day probability of leaving the current regime once `min_dwell` has elapsed.
    pub switch_rate: f64,
    pub min_dwell: usize,
    /// Multiplier on every variable's between-regime shift.
    pub effect_size: f64,
    /// Days from a regime change to its recorded event.
    pub event_lag: u32,
    /// Probability that a day's emotion label departs from its regime's valence.
    pub emotion_noise: f64,
    /// Fraction of days without an emotion label.
    pub label_sparsity: f64,
    /// Probability that an observed non-binary value is a gross outlier.
    pub outlier_rate: f64,
    pub start_date: NaiveDate,
}

impl Default for CohortConfig {
    fn default() -> Self {
        Self {
            n_patients: 20,
            min_length: 200,
            max_length: 200,
            n_regimes: 2,
            switch_rate: 0.03,
            min_dwell: 14,
            effect_size: 1.0,
            event_lag: 5,
            emotion_noise: 0.1,
            label_sparsity: 0.96,
            outlier_rate: 0.005,
            start_date: NaiveDate::from_ymd_opt(2019, 3, 15).expect("valid date"),
        }
    }
}

impl CohortConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: String| Err(DataError::InvalidConfig(m));
        if self.n_patients == 0 {
            return bad("n_patients must be at least 1".into());
        }
        if self.min_length == 0 || self.max_length < self.min_length {
            return bad(format!(
                "degenerate length distribution: min_length {} max_length {}",
                self.min_length, self.max_length
            ));
        }
        if self.n_regimes == 0 {
            return bad("n_regimes must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.switch_rate) {
            return bad(format!("switch_rate {} outside [0, 1)", self.switch_rate));
        }
        for (key, v) in [
            ("emotion_noise", self.emotion_noise),
            ("label_sparsity", self.label_sparsity),
            ("outlier_rate", self.outlier_rate),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{key} {v} outside [0, 1]"));
            }
        }
        if !(self.effect_size.is_finite() && self.effect_size >= 0.0) {
            return bad(format!("effect_size {} must be finite and nonnegative", self.effect_size));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatientTruth {
    pub patient_id: String,
    pub regimes: Vec<usize>,
    /// Days `t` with `regimes[t] != regimes[t - 1]`.
    pub change_points: Vec<u32>,
    pub events: Vec<u32>,
    pub emotions: Vec<Option<u8>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CohortTruth {
    /// `regime_offsets[r][f]`: signed shift direction of regime `r` on variable `f`.
    pub regime_offsets: Vec<Vec<f64>>,
    pub regime_valence: Vec<u8>,
    pub patients: Vec<PatientTruth>,
}

impl CohortTruth {
    pub fn patient(&self, id: &str) -> Option<&PatientTruth> {
        self.patients.iter().find(|p| p.patient_id == id)
    }
}

pub fn valence_of(regime: usize, n_regimes: usize) -> u8 {
    if n_regimes <= 1 {
        1
    } else {
        ((2 * regime) as f64 / (n_regimes - 1) as f64).round() as u8
    }
}

/// Evenly spaced offsets in `[-1, 1]`, independently shuffled per variable.
fn regime_offsets(n_regimes: usize, n_vars: usize, rng: &mut KernelRng) -> Vec<Vec<f64>> {
    let base: Vec<f64> = if n_regimes == 1 {
        vec![0.0]
    } else {
        (0..n_regimes)
            .map(|r| -1.0 + 2.0 * r as f64 / (n_regimes - 1) as f64)
            .collect()
    };
    let mut out = vec![vec![0.0; n_vars]; n_regimes];
    for f in 0..n_vars {
        let mut col = base.clone();
        col.shuffle(rng);
        for r in 0..n_regimes {
            out[r][f] = col[r];
        }
    }
    out
}

pub fn regime_path(len: usize, cfg: &CohortConfig, rng: &mut KernelRng) -> Vec<usize> {
    let mut path = Vec::with_capacity(len);
    let mut regime = rng.random_range(0..cfg.n_regimes);
    let mut dwell = 0usize;
    for _ in 0..len {
        if cfg.n_regimes > 1 && dwell >= cfg.min_dwell && rng.random::<f64>() < cfg.switch_rate {
            let other = rng.random_range(0..cfg.n_regimes - 1);
            regime = if other >= regime { other + 1 } else { other };
            dwell = 0;
        }
        path.push(regime);
        dwell += 1;
    }
    path
}

pub fn change_points(regimes: &[usize]) -> Vec<u32> {
    (1..regimes.len())
        .filter(|&t| regimes[t] != regimes[t - 1])
        .map(|t| t as u32)
        .collect()
}

fn emit(spec: &VariableSpec, shift: f64, date: NaiveDate, rng: &mut KernelRng) -> f64 {
    let e = &spec.emission;
    let loc = e.location + shift;
    let gauss = |rng: &mut KernelRng| {
        if e.spread > 0.0 {
            Normal::new(loc, e.spread).expect("positive spread").sample(rng)
        } else {
            loc
        }
    };
    match spec.value_type {
        ValueType::Binary if e.calendar => f64::from(u8::from(matches!(date.weekday(), Weekday::Sat | Weekday::Sun))),
        ValueType::Binary => {
            let p = 1.0 / (1.0 + (-loc).exp());
            f64::from(u8::from(rng.random::<f64>() < p))
        }
        ValueType::Real => gauss(rng),
        ValueType::PositiveReal => gauss(rng).exp(),
        ValueType::Count => {
            let rate = gauss(rng).exp();
            Poisson::new(rate.max(1e-9)).expect("positive rate").sample(rng)
        }
    }
}

fn outlier(spec: &VariableSpec, rng: &mut KernelRng) -> Option<f64> {
    let jump = 0.5 + rng.random::<f64>();
    match (spec.min, spec.max) {
        (_, Some(hi)) if rng.random::<bool>() || spec.min.is_none() => Some(hi + (hi.abs() + 1.0) * jump),
        (Some(lo), _) => Some(lo - (lo.abs() + 1.0) * jump),
        _ => None,
    }
}

fn generate_patient(
    index: usize,
    seed: u64,
    cfg: &CohortConfig,
    catalog: &Catalog,
    offsets: &[Vec<f64>],
    valence: &[u8],
) -> (TimeSeriesSample, PatientTruth) {
    let mut rng = rng_for(seed, &format!("cohort/patient/{index}"));
    let len = rng.random_range(cfg.min_length..=cfg.max_length);
    let start_date = cfg
        .start_date
        .checked_add_days(Days::new(rng.random_range(0..365)))
        .expect("date in range");
    let regimes = regime_path(len, cfg, &mut rng);
    let n_vars = catalog.len();
    let mut values = vec![vec![f64::NAN; len]; n_vars];
    let mut mask = vec![vec![MISSING; len]; n_vars];
    for t in 0..len {
        let date = start_date + Days::new(t as u64);
        for (f, spec) in catalog.variables.iter().enumerate() {
            let shift = spec.emission.regime_shift * cfg.effect_size * offsets[regimes[t]][f];
            let mut v = emit(spec, shift, date, &mut rng);
            if !spec.value_type.is_binary() && rng.random::<f64>() < cfg.outlier_rate {
                v = outlier(spec, &mut rng).unwrap_or(v);
            }
            if rng.random::<f64>() >= spec.missing_rate {
                values[f][t] = v;
                mask[f][t] = OBSERVED;
            }
        }
    }
    let cps = change_points(&regimes);
    let events = cps
        .iter()
        .map(|&c| c + cfg.event_lag)
        .filter(|&e| (e as usize) < len)
        .collect();
    let n_classes = 3u8;
    let emotions = regimes
        .iter()
        .map(|&r| {
            if rng.random::<f64>() < cfg.label_sparsity {
                return None;
            }
            let v = valence[r];
            if rng.random::<f64>() < cfg.emotion_noise {
                let other = rng.random_range(0..n_classes - 1);
                Some(if other >= v { other + 1 } else { other })
            } else {
                Some(v)
            }
        })
        .collect();
    let patient_id = format!("p{index:03}");
    let sample = TimeSeriesSample {
        patient_id: patient_id.clone(),
        segment: 0,
        start_date,
        days: (0..len as u32).collect(),
        values,
        mask,
        space: Space::Original,
        corruption: None,
    };
    let truth = PatientTruth {
        patient_id,
        regimes,
        change_points: cps,
        events,
        emotions,
    };
    (sample, truth)
}

/// Generates `cfg.n_patients` raw records in original space together with
/// their ground truth. Output depends only on `(seed, cfg, catalog)`.
pub fn generate_cohort(
    seed: u64,
    cfg: &CohortConfig,
    catalog: &Catalog,
) -> Result<(Vec<TimeSeriesSample>, CohortTruth), DataError> {
    cfg.validate()?;
    catalog.validate()?;
    let offsets = regime_offsets(cfg.n_regimes, catalog.len(), &mut rng_for(seed, "cohort/regimes"));
    let valence: Vec<u8> = (0..cfg.n_regimes).map(|r| valence_of(r, cfg.n_regimes)).collect();
    let (samples, patients) = (0..cfg.n_patients)
        .map(|i| generate_patient(i, seed, cfg, catalog, &offsets, &valence))
        .unzip();
    Ok((
        samples,
        CohortTruth {
            regime_offsets: offsets,
            regime_valence: valence,
            patients,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> CohortConfig {
        CohortConfig {
            n_patients: 4,
            min_length: 60,
            max_length: 90,
            ..CohortConfig::default()
        }
    }

    #[test]
    fn zero_switch_rate_has_no_change_points() {
        let cfg = CohortConfig {
            switch_rate: 0.0,
            ..small()
        };
        let (_, truth) = generate_cohort(3, &cfg, &Catalog::default_catalog()).unwrap();
        assert!(truth.patients.iter().all(|p| p.change_points.is_empty() && p.events.is_empty()));
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let cat = Catalog::default_catalog();
        let (a, ta) = generate_cohort(11, &small(), &cat).unwrap();
        let (b, tb) = generate_cohort(11, &small(), &cat).unwrap();
        assert_eq!(ta, tb);
        for (x, y) in a.iter().zip(&b) {
            for (vx, vy) in x.values.iter().flatten().zip(y.values.iter().flatten()) {
                assert_eq!(vx.to_bits(), vy.to_bits());
            }
            assert_eq!(x.mask, y.mask);
        }
    }

    #[test]
    fn degenerate_lengths_rejected() {
        let cfg = CohortConfig {
            min_length: 50,
            max_length: 40,
            ..small()
        };
        assert!(matches!(
            generate_cohort(1, &cfg, &Catalog::default_catalog()),
            Err(DataError::InvalidConfig(_))
        ));
    }

    #[test]
    fn weekend_follows_calendar() {
        let (samples, _) = generate_cohort(5, &small(), &Catalog::default_catalog()).unwrap();
        let s = &samples[0];
        for t in 0..s.len() {
            let date = s.start_date + Days::new(t as u64);
            let we = matches!(date.weekday(), Weekday::Sat | Weekday::Sun);
            assert_eq!(s.values[8][t], f64::from(u8::from(we)));
            assert_eq!(s.mask[8][t], OBSERVED);
        }
    }

    #[test]
    fn dwell_is_respected() {
        let cfg = CohortConfig {
            switch_rate: 0.5,
            min_dwell: 10,
            ..small()
        };
        let mut rng = rng_for(1, "t");
        let path = regime_path(500, &cfg, &mut rng);
        let cps = change_points(&path);
        assert!(!cps.is_empty());
        assert!(cps.windows(2).all(|w| w[1] - w[0] >= 10));
    }
}
