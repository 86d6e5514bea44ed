//! Profiles to change-point alarms and to emotion windows, with the
//! evaluation glue shared by the CLI, the ablation runner and the tests.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::auc::weighted_auc;
use super::cnn::{train_emotion_cnn, ClassifierSpec, EmotionCnn, EmotionReport};
use super::windows::{build_windows, DayEmbedding, EmotionWindow};
use super::DownstreamError;
use crate::cpd::{
    alarm_scores, roc_sweep, run, sample_profile_sequence, AlarmConfig, Categorical, Hazard, ModelSpec, Multinomial,
    RocCurve, RunLengthPosterior, ScoredSeries, Sequence, PRUNE_THRESHOLD,
};
use crate::datagen::{CohortTruth, TimeSeriesSample};
use crate::numkernel::checkpoint::write_atomic;
use crate::seed::derive_seed;
use crate::vqmodel::{extract_profiles, Codebook, ProfileSequence, VqModel};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileModel {
    /// One hard profile per day.
    #[default]
    Hierarchical,
    /// `samples_per_day` draws from each day's profile distribution.
    Multinomial,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EventConfig {
    /// Top codes kept per sample before the dummy profile.
    pub profiles: usize,
    pub model: ProfileModel,
    pub samples_per_day: u32,
    pub alpha: f64,
    pub lambdas: Vec<f64>,
    pub alarm: AlarmConfig,
    /// Threshold grid; every distinct score when absent.
    pub thresholds: Option<Vec<f64>>,
    pub prune: Option<f64>,
}

impl Default for EventConfig {
    fn default() -> Self {
        Self {
            profiles: 20,
            model: ProfileModel::Hierarchical,
            samples_per_day: 10,
            alpha: 1.0,
            lambdas: vec![10.0, 1e3, 1e5, 1e7],
            alarm: AlarmConfig::default(),
            thresholds: None,
            prune: Some(PRUNE_THRESHOLD),
        }
    }
}

impl EventConfig {
    pub fn validate(&self) -> Result<(), DownstreamError> {
        if self.profiles == 0 {
            return Err(DownstreamError::InvalidConfig("profiles must be at least 1".into()));
        }
        if self.model == ProfileModel::Multinomial && self.samples_per_day == 0 {
            return Err(DownstreamError::InvalidConfig("samples_per_day must be at least 1".into()));
        }
        if !(self.alpha > 0.0) {
            return Err(DownstreamError::InvalidConfig("alpha must be positive".into()));
        }
        if self.lambdas.is_empty() {
            return Err(DownstreamError::InvalidConfig("lambdas must not be empty".into()));
        }
        for &l in &self.lambdas {
            Hazard::new(l)?;
        }
        self.alarm.validate()?;
        Ok(())
    }
}

/// A profiled segment with its event positions (indices into the segment).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfiledSample {
    pub patient_id: String,
    pub days: Vec<u32>,
    pub profile: ProfileSequence,
    pub events: Vec<usize>,
}

/// Positions in `sample` whose record day carries an event.
pub fn events_in(sample: &TimeSeriesSample, events: &[u32]) -> Vec<usize> {
    sample
        .days
        .iter()
        .enumerate()
        .filter(|(_, d)| events.contains(d))
        .map(|(t, _)| t)
        .collect()
}

pub fn profile_samples(
    model: &VqModel,
    samples: &[TimeSeriesSample],
    truth: Option<&CohortTruth>,
    m: usize,
) -> Result<Vec<ProfiledSample>, DownstreamError> {
    samples
        .iter()
        .map(|s| {
            let events = truth
                .and_then(|t| t.patient(&s.patient_id))
                .map(|p| events_in(s, &p.events))
                .unwrap_or_default();
            Ok(ProfiledSample {
                patient_id: s.patient_id.clone(),
                days: s.days.clone(),
                profile: extract_profiles(model, s, m)?,
                events,
            })
        })
        .collect()
}

/// CPD over one profile sequence.
pub fn detect(profile: &ProfileSequence, lambda: f64, cfg: &EventConfig, seed: u64) -> Result<RunLengthPosterior, DownstreamError> {
    let k = profile.alphabet();
    let (seq, spec) = match cfg.model {
        ProfileModel::Hierarchical => (Sequence::Ids(profile.ids.clone()), ModelSpec::Hierarchical(Categorical::new(k, cfg.alpha))),
        ProfileModel::Multinomial => {
            let s = derive_seed(seed, &format!("cpd/{}", profile.sample));
            let counts = sample_profile_sequence(&profile.probs, cfg.samples_per_day, s)?;
            (
                Sequence::Counts(counts),
                ModelSpec::Multinomial(Multinomial::new(k, cfg.alpha, cfg.samples_per_day)),
            )
        }
    };
    Ok(run(&seq, &spec, Hazard::new(lambda)?, cfg.prune)?)
}

pub fn score_samples(
    samples: &[ProfiledSample],
    lambda: f64,
    cfg: &EventConfig,
    seed: u64,
) -> Result<Vec<(ScoredSeries, RunLengthPosterior)>, DownstreamError> {
    samples
        .iter()
        .map(|s| {
            let post = detect(&s.profile, lambda, cfg, seed)?;
            let scored = ScoredSeries {
                id: s.profile.sample.clone(),
                scores: alarm_scores(&post, &cfg.alarm),
                events: s.events.clone(),
            };
            Ok((scored, post))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaRoc {
    pub lambda: f64,
    pub roc: RocCurve,
}

/// One ROC curve per hazard rate plus the mean AUC over them.
pub fn event_roc(samples: &[ProfiledSample], cfg: &EventConfig, seed: u64) -> Result<(Vec<LambdaRoc>, f64), DownstreamError> {
    cfg.validate()?;
    let mut out = Vec::with_capacity(cfg.lambdas.len());
    for &lambda in &cfg.lambdas {
        let series: Vec<ScoredSeries> = score_samples(samples, lambda, cfg, seed)?.into_iter().map(|(s, _)| s).collect();
        let roc = roc_sweep(&series, cfg.alarm.direction(), cfg.thresholds.as_deref(), cfg.alarm.window)?;
        out.push(LambdaRoc { lambda, roc });
    }
    let mean = out.iter().map(|r| r.roc.auc).sum::<f64>() / out.len() as f64;
    Ok((out, mean))
}

pub fn emotion_windows(
    samples: &[ProfiledSample],
    truth: &CohortTruth,
    codebook: &Codebook,
    mode: DayEmbedding,
) -> Result<Vec<EmotionWindow>, DownstreamError> {
    let mut out = Vec::new();
    for s in samples {
        let Some(p) = truth.patient(&s.patient_id) else {
            continue;
        };
        out.extend(build_windows(&s.patient_id, &s.profile, &s.days, &p.emotions, codebook, mode)?);
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct EmotionOutcome {
    pub model: EmotionCnn,
    pub report: EmotionReport,
    pub predictions: Vec<Vec<f64>>,
    pub weighted_auc: f64,
}

/// Trains on `train` and scores `test`; both must come from disjoint patients.
pub fn evaluate_emotion(
    train: &[EmotionWindow],
    test: &[EmotionWindow],
    spec: &ClassifierSpec,
    seed: u64,
) -> Result<EmotionOutcome, DownstreamError> {
    if let Some(w) = test.iter().find(|w| train.iter().any(|t| t.patient_id == w.patient_id)) {
        return Err(DownstreamError::InvalidInput(format!("patient {} is in both train and test windows", w.patient_id)));
    }
    let (model, report) = train_emotion_cnn(train, spec, seed)?;
    let predictions = model.predict(test)?;
    let labels: Vec<usize> = test.iter().map(|w| w.label as usize).collect();
    let weighted_auc = weighted_auc(&predictions, &labels)?;
    Ok(EmotionOutcome {
        model,
        report,
        predictions,
        weighted_auc,
    })
}

/// Columns `patient,day,p_negative,p_neutral,p_positive,label`.
pub fn write_predictions_csv(path: &Path, windows: &[EmotionWindow], probs: &[Vec<f64>]) -> Result<(), DownstreamError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| DownstreamError::InvalidInput(format!("{}: {e}", path.display()));
    w.write_record(["patient", "day", "p_negative", "p_neutral", "p_positive", "label"]).map_err(err)?;
    for (win, p) in windows.iter().zip(probs) {
        let mut row = vec![win.patient_id.clone(), win.day.to_string()];
        row.extend(p.iter().map(|x| format!("{x:?}")));
        row.push(win.label.to_string());
        w.write_record(&row).map_err(err)?;
    }
    let bytes = w.into_inner().map_err(|e| DownstreamError::InvalidInput(e.to_string()))?;
    write_atomic(path, &bytes)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vqmodel::profile_sequence;

    fn two_regime(len: usize, change: usize) -> ProfiledSample {
        let codes: Vec<usize> = (0..len).map(|t| if t < change { t % 2 } else { 2 + t % 2 }).collect();
        ProfiledSample {
            patient_id: "p".into(),
            days: (0..len as u32).collect(),
            profile: profile_sequence("p/0", &codes, None, 20).unwrap(),
            events: vec![change + 2],
        }
    }

    #[test]
    fn disjoint_alphabet_shift_is_detected() {
        let samples = vec![two_regime(60, 30)];
        let cfg = EventConfig {
            lambdas: vec![100.0],
            ..EventConfig::default()
        };
        let (rocs, mean) = event_roc(&samples, &cfg, 0).unwrap();
        assert_eq!(rocs.len(), 1);
        assert!(mean > 0.9, "{mean}");
    }

    #[test]
    fn multinomial_scores_are_reproducible() {
        let samples = vec![two_regime(40, 20)];
        let cfg = EventConfig {
            model: ProfileModel::Multinomial,
            lambdas: vec![100.0],
            ..EventConfig::default()
        };
        assert_eq!(event_roc(&samples, &cfg, 3).unwrap(), event_roc(&samples, &cfg, 3).unwrap());
    }

    #[test]
    fn overlapping_patients_are_rejected() {
        let w = EmotionWindow {
            patient_id: "p".into(),
            day: 8,
            rows: vec![vec![0.0; 8]; 7],
            label: 1,
        };
        assert!(evaluate_emotion(&[w.clone()], &[w], &ClassifierSpec::default(), 0).is_err());
    }
}
