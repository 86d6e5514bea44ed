//! TOML run configuration with dotted-key overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::CliError;
use crate::cpd::{AlarmConfig, PRUNE_THRESHOLD};
use crate::datagen::{CohortConfig, McarConfig, MnarConfig, PrepareConfig};
use crate::downstream::{AblationGrid, ClassifierSpec, DayEmbedding, EvalSplit, EventConfig, ProfileModel};
use crate::vqmodel::{TrainConfig, VqConfig};

pub const OUT_ENV: &str = "VQPROFILE_OUT";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainVqSection {
    pub model: VqConfig,
    pub train: TrainConfig,
    /// Corruption applied to validation and test samples for the
    /// imputation report.
    pub mcar: McarConfig,
    pub mnar: MnarConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProfileSection {
    /// Top codes kept per sample; the rest share the dummy profile.
    pub profiles: usize,
}

impl Default for ProfileSection {
    fn default() -> Self {
        Self { profiles: 20 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CpdSection {
    pub model: ProfileModel,
    pub samples_per_day: u32,
    pub alpha: f64,
    pub lambdas: Vec<f64>,
    pub alarm: AlarmConfig,
    pub prune: Option<f64>,
    pub split: EvalSplit,
    /// Dense run-length posteriors in the binary dump format.
    pub write_posteriors: bool,
}

impl Default for CpdSection {
    fn default() -> Self {
        let e = EventConfig::default();
        Self {
            model: e.model,
            samples_per_day: e.samples_per_day,
            alpha: e.alpha,
            lambdas: e.lambdas,
            alarm: e.alarm,
            prune: Some(PRUNE_THRESHOLD),
            split: EvalSplit::Test,
            write_posteriors: false,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalEventsSection {
    /// Days before an event in which an alarm counts as a detection.
    /// Falls back to `cpd.alarm.window`.
    pub window: Option<usize>,
    pub thresholds: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmotionSection {
    pub classifier: ClassifierSpec,
    pub profiles: usize,
    pub embedding: DayEmbedding,
}

impl Default for EmotionSection {
    fn default() -> Self {
        Self {
            classifier: ClassifierSpec::default(),
            profiles: 20,
            embedding: DayEmbedding::Hard,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub synth: CohortConfig,
    pub preprocess: PrepareConfig,
    pub train_vq: TrainVqSection,
    pub profile: ProfileSection,
    pub cpd: CpdSection,
    pub eval_events: EvalEventsSection,
    pub emotion: EmotionSection,
    pub ablate: AblationGrid,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: PathBuf::from("runs/default"),
            synth: CohortConfig::default(),
            preprocess: PrepareConfig::default(),
            train_vq: TrainVqSection::default(),
            profile: ProfileSection::default(),
            cpd: CpdSection::default(),
            eval_events: EvalEventsSection::default(),
            emotion: EmotionSection::default(),
            ablate: AblationGrid::default(),
        }
    }
}

impl RunConfig {
    /// The event-detection settings assembled from the profile, cpd and
    /// eval_events sections.
    pub fn event_config(&self) -> EventConfig {
        EventConfig {
            profiles: self.profile.profiles,
            model: self.cpd.model,
            samples_per_day: self.cpd.samples_per_day,
            alpha: self.cpd.alpha,
            lambdas: self.cpd.lambdas.clone(),
            alarm: self.cpd.alarm.clone(),
            thresholds: self.eval_events.thresholds.clone(),
            prune: self.cpd.prune,
        }
    }

    pub fn evaluation_window(&self) -> usize {
        self.eval_events.window.unwrap_or(self.cpd.alarm.window)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let mut bad = Vec::new();
        let mut check = |key: &str, r: Result<(), String>| {
            if let Err(m) = r {
                bad.push((key.to_string(), m));
            }
        };
        check(
            "seed",
            if self.seed > i64::MAX as u64 { Err("must not exceed 2^63 - 1".into()) } else { Ok(()) },
        );
        check("synth", self.synth.validate().map_err(|e| e.to_string()));
        check(
            "preprocess",
            if self.preprocess.train_fraction + self.preprocess.validation_fraction > 1.0 + 1e-12 {
                Err("train_fraction + validation_fraction exceeds 1".into())
            } else {
                Ok(())
            },
        );
        check("train_vq.model", self.train_vq.model.validate().map_err(|e| e.to_string()));
        check("train_vq.train", self.train_vq.train.validate().map_err(|e| e.to_string()));
        check(
            "train_vq.mcar",
            if (0.0..=1.0).contains(&self.train_vq.mcar.rate) { Ok(()) } else { Err("rate must lie in [0, 1]".into()) },
        );
        check(
            "profile.profiles",
            if self.profile.profiles == 0 { Err("must be at least 1".into()) } else { Ok(()) },
        );
        check("cpd", self.event_config().validate().map_err(|e| e.to_string()));
        check(
            "eval_events.window",
            if self.eval_events.window == Some(0) { Err("must be at least 1".into()) } else { Ok(()) },
        );
        check("emotion.classifier", self.emotion.classifier.validate().map_err(|e| e.to_string()));
        check(
            "emotion.profiles",
            if self.emotion.profiles == 0 { Err("must be at least 1".into()) } else { Ok(()) },
        );
        check("ablate", self.ablate.validate().map_err(|e| e.to_string()));
        if bad.is_empty() {
            Ok(())
        } else {
            Err(CliError::Config(bad))
        }
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::Runtime(format!("serializing config: {e}")))
    }
}

fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// Applies `a.b.c=value`; the value is read as TOML and falls back to a
/// bare string.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<(), CliError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::config("--set", format!("expected key=value, got {assignment:?}")))?;
    let key = key.trim();
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::config(key, "empty key segment"));
    }
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = match entry {
            toml::Value::Table(t) => t,
            _ => return Err(CliError::config(key, format!("{p} is not a table"))),
        };
    }
    cur.insert(parts[parts.len() - 1].to_string(), parse_value(raw.trim()));
    Ok(())
}

pub fn from_table(table: toml::Table) -> Result<RunConfig, CliError> {
    serde_path_to_error::deserialize(toml::Value::Table(table)).map_err(|e| {
        let key = e.path().to_string();
        CliError::config(if key == "." { "<root>" } else { &key }, e.into_inner().to_string().trim())
    })
}

pub fn read_table(path: &Path) -> Result<toml::Table, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::config("--config", format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::config("--config", format!("{}: {e}", path.display())))
}

/// File keys, then `--set` assignments, then `--seed`, then the output
/// root from `--out` or the environment.
pub fn load(
    path: Option<&Path>,
    sets: &[String],
    seed: Option<u64>,
    out: Option<&Path>,
) -> Result<RunConfig, CliError> {
    let mut table = match path {
        Some(p) => read_table(p)?,
        None => toml::Table::new(),
    };
    for s in sets {
        apply_override(&mut table, s)?;
    }
    let mut cfg = from_table(table)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    match out {
        Some(o) => cfg.out_dir = o.to_path_buf(),
        None => {
            if let Some(o) = std::env::var_os(OUT_ENV) {
                cfg.out_dir = PathBuf::from(o);
            }
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_toml() {
        let cfg = RunConfig::default();
        let back: RunConfig = toml::from_str(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_key_is_reported_with_its_path() {
        let mut t = toml::Table::new();
        apply_override(&mut t, "train_vq.train.epochz=3").unwrap();
        match from_table(t) {
            Err(CliError::Config(d)) => assert!(d[0].0.starts_with("train_vq.train"), "{d:?}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn overrides_parse_toml_values() {
        let mut t = toml::Table::new();
        apply_override(&mut t, "cpd.lambdas=[10.0, 1000.0]").unwrap();
        apply_override(&mut t, "train_vq.model.variant=E2").unwrap();
        let cfg = from_table(t).unwrap();
        assert_eq!(cfg.cpd.lambdas, vec![10.0, 1e3]);
        assert_eq!(cfg.train_vq.model.variant, crate::vqmodel::Variant::E2);
    }

    #[test]
    fn invalid_values_name_their_section() {
        let mut t = toml::Table::new();
        apply_override(&mut t, "cpd.lambdas=[0.5]").unwrap();
        match from_table(t).unwrap().validate() {
            Err(CliError::Config(d)) => assert_eq!(d[0].0, "cpd"),
            other => panic!("{other:?}"),
        }
    }
}
