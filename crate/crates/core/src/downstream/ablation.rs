//! Grid of embedding dimension by dictionary size, each cell trained (or
//! loaded) and scored on event detection and optionally emotion prediction.

use std::path::{Path, PathBuf};

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::cnn::ClassifierSpec;
use super::pipeline::{emotion_windows, evaluate_emotion, event_roc, profile_samples, EventConfig};
use super::windows::DayEmbedding;
use super::DownstreamError;
use crate::datagen::{CohortTruth, Prepared};
use crate::numkernel::Checkpoint;
use crate::seed::rng_for;
use crate::vqmodel::{train, TrainConfig, Variant, VqConfig, VqModel};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalSplit {
    #[default]
    Test,
    All,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationGrid {
    pub embedding_dims: Vec<usize>,
    pub codebook_sizes: Vec<usize>,
    pub variant: Variant,
    pub seeds: Vec<u64>,
    pub train: TrainConfig,
    pub event: EventConfig,
    pub event_split: EvalSplit,
    /// Emotion cells are skipped when absent.
    pub emotion: Option<ClassifierSpec>,
    pub emotion_profiles: usize,
    pub embedding: DayEmbedding,
    pub threads: usize,
    pub allow_training: bool,
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for AblationGrid {
    fn default() -> Self {
        Self {
            embedding_dims: vec![80, 320],
            codebook_sizes: vec![256, 512, 1024],
            variant: Variant::Implicit,
            seeds: vec![0],
            train: TrainConfig::default(),
            event: EventConfig::default(),
            event_split: EvalSplit::Test,
            emotion: None,
            emotion_profiles: 20,
            embedding: DayEmbedding::Hard,
            threads: 1,
            allow_training: true,
            checkpoint_dir: None,
        }
    }
}

impl AblationGrid {
    pub fn cells(&self) -> Vec<(usize, usize, u64)> {
        let mut out = Vec::new();
        for &d in &self.embedding_dims {
            for &w in &self.codebook_sizes {
                for &s in &self.seeds {
                    out.push((d, w, s));
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<(), DownstreamError> {
        if self.cells().is_empty() {
            return Err(DownstreamError::InvalidConfig("ablation grid has no cells".into()));
        }
        if self.threads == 0 {
            return Err(DownstreamError::InvalidConfig("threads must be at least 1".into()));
        }
        self.train.validate()?;
        self.event.validate()?;
        if let Some(e) = &self.emotion {
            e.validate()?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationCell {
    pub embedding_dim: usize,
    pub codebook_size: usize,
    pub variant: Variant,
    pub seed: u64,
    pub profiles: usize,
    pub samples_per_day: u32,
    pub window: usize,
    pub lambdas: Vec<f64>,
    pub cohort_hash: String,
    pub event_auc_per_lambda: Vec<f64>,
    pub event_auc: f64,
    pub emotion_auc: Option<f64>,
    pub trained: bool,
}

pub fn checkpoint_path(dir: &Path, variant: Variant, d: usize, w: usize, seed: u64) -> PathBuf {
    dir.join(format!("vq_{}_d{d}_w{w}_seed{seed}.json", variant.name()))
}

fn obtain_model(
    grid: &AblationGrid,
    prepared: &Prepared,
    binary: &[bool],
    d: usize,
    w: usize,
    seed: u64,
) -> Result<(VqModel, bool), DownstreamError> {
    let path = grid.checkpoint_dir.as_deref().map(|dir| checkpoint_path(dir, grid.variant, d, w, seed));
    if let Some(p) = path.as_deref().filter(|p| p.exists()) {
        return Ok((VqModel::from_checkpoint(&Checkpoint::load(p)?)?, false));
    }
    if !grid.allow_training {
        return Err(DownstreamError::MissingCheckpoint(
            path.map_or_else(|| "no checkpoint directory".into(), |p| p.display().to_string()),
        ));
    }
    let cfg = VqConfig {
        variant: grid.variant,
        embedding_dim: d,
        codebook_size: w,
        ..VqConfig::default()
    };
    let mut model = VqModel::new(cfg, binary.to_vec(), &mut rng_for(seed, "vq/init"))?;
    let report = train(&mut model, &prepared.train, &prepared.validation, &grid.train, seed)?;
    if let Some(p) = path {
        model.to_checkpoint(Some(report.optimizer), serde_json::Value::Null)?.save(&p)?;
    }
    Ok((model, true))
}

fn run_cell(
    grid: &AblationGrid,
    prepared: &Prepared,
    truth: &CohortTruth,
    binary: &[bool],
    cohort_hash: &str,
    (d, w, seed): (usize, usize, u64),
) -> Result<AblationCell, DownstreamError> {
    let (model, trained) = obtain_model(grid, prepared, binary, d, w, seed)?;
    let eval: Vec<_> = match grid.event_split {
        EvalSplit::Test => prepared.test.clone(),
        EvalSplit::All => prepared.all().cloned().collect(),
    };
    let profiled = profile_samples(&model, &eval, Some(truth), grid.event.profiles)?;
    let (rocs, event_auc) = event_roc(&profiled, &grid.event, seed)?;
    let emotion_auc = match &grid.emotion {
        None => None,
        Some(spec) => {
            let m = grid.emotion_profiles;
            let tr = profile_samples(&model, &prepared.train, Some(truth), m)?;
            let te = profile_samples(&model, &prepared.test, Some(truth), m)?;
            let train_w = emotion_windows(&tr, truth, &model.codebook, grid.embedding)?;
            let test_w = emotion_windows(&te, truth, &model.codebook, grid.embedding)?;
            Some(evaluate_emotion(&train_w, &test_w, spec, seed)?.weighted_auc)
        }
    };
    info!("cell d={d} w={w} seed={seed}: event AUC {event_auc:.4}");
    Ok(AblationCell {
        embedding_dim: d,
        codebook_size: w,
        variant: grid.variant,
        seed,
        profiles: grid.event.profiles,
        samples_per_day: grid.event.samples_per_day,
        window: grid.event.alarm.window,
        lambdas: grid.event.lambdas.clone(),
        cohort_hash: cohort_hash.to_string(),
        event_auc_per_lambda: rocs.iter().map(|r| r.roc.auc).collect(),
        event_auc,
        emotion_auc,
        trained,
    })
}

/// Cells run in parallel on `grid.threads` workers; the output order
/// follows [`AblationGrid::cells`].
pub fn run_ablation(
    grid: &AblationGrid,
    prepared: &Prepared,
    truth: &CohortTruth,
    binary: &[bool],
    cohort_hash: &str,
) -> Result<Vec<AblationCell>, DownstreamError> {
    grid.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(grid.threads)
        .build()
        .map_err(|e| DownstreamError::InvalidConfig(format!("thread pool: {e}")))?;
    pool.install(|| {
        grid.cells()
            .into_par_iter()
            .map(|cell| run_cell(grid, prepared, truth, binary, cohort_hash, cell))
            .collect()
    })
}

/// Rows `embedding_dim,codebook_size,seed,event_auc,emotion_auc`.
pub fn write_ablation_csv(path: &Path, cells: &[AblationCell]) -> Result<(), DownstreamError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| DownstreamError::InvalidInput(format!("{}: {e}", path.display()));
    w.write_record(["embedding_dim", "codebook_size", "seed", "event_auc", "emotion_auc"]).map_err(err)?;
    for c in cells {
        w.write_record([
            c.embedding_dim.to_string(),
            c.codebook_size.to_string(),
            c.seed.to_string(),
            format!("{:?}", c.event_auc),
            c.emotion_auc.map(|a| format!("{a:?}")).unwrap_or_default(),
        ])
        .map_err(err)?;
    }
    let bytes = w.into_inner().map_err(|e| DownstreamError::InvalidInput(e.to_string()))?;
    crate::numkernel::checkpoint::write_atomic(path, &bytes)?;
    Ok(())
}
