//! Mini-batch training on random crops with EMA codebook updates,
//! end-of-epoch dead-code restarts and a plateau learning-rate schedule.

use std::ops::Range;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::arch::{Batch, VqModel};
use super::codebook::Codebook;
use super::VqError;
use crate::datagen::TimeSeriesSample;
use crate::numkernel::{Adam, AdamConfig, EarlyStopping, Mode, PlateauScheduler};
use crate::seed::rng_for;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub crop_length: usize,
    pub crops_per_sample: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub clip_norm: f64,
    pub plateau_factor: f64,
    pub plateau_patience: usize,
    pub early_stopping_patience: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 60,
            batch_size: 16,
            crop_length: 28,
            crops_per_sample: 8,
            lr: 1e-3,
            weight_decay: 0.0,
            clip_norm: 2.0,
            plateau_factor: 0.1,
            plateau_patience: 10,
            early_stopping_patience: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), VqError> {
        if self.epochs == 0 || self.batch_size == 0 || self.crop_length == 0 || self.crops_per_sample == 0 {
            return Err(VqError::InvalidConfig("epochs, batch_size, crop_length and crops_per_sample must be positive".into()));
        }
        if !(self.lr > 0.0 && self.clip_norm > 0.0) {
            return Err(VqError::InvalidConfig("lr and clip_norm must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_loss: Option<f64>,
    pub lr: f64,
    pub perplexity: f64,
    pub restarted: usize,
    pub max_grad_norm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub stopped_early: bool,
    pub optimizer: Adam,
}

fn crops(samples: &[&TimeSeriesSample], cfg: &TrainConfig, rng: &mut impl Rng) -> Vec<(usize, Range<usize>)> {
    let mut out = Vec::new();
    for (i, s) in samples.iter().enumerate() {
        for _ in 0..cfg.crops_per_sample {
            let start = rng.random_range(0..=s.len() - cfg.crop_length);
            out.push((i, start..start + cfg.crop_length));
        }
    }
    out.shuffle(rng);
    out
}

/// Mean loss of full-length samples in evaluation mode.
pub fn evaluate_samples(model: &VqModel, samples: &[TimeSeriesSample]) -> Result<Option<f64>, VqError> {
    if samples.is_empty() {
        return Ok(None);
    }
    let mut total = 0.0;
    for s in samples {
        total += model.evaluate(&Batch::from_sample(s)?)?.total;
    }
    Ok(Some(total / samples.len() as f64))
}

/// Rescales the random codebook to the RMS of encoder outputs on one batch.
fn init_codebook(model: &mut VqModel, batch: &Batch, rng: &mut crate::numkernel::KernelRng) -> Result<(), VqError> {
    let mut probe = model.clone();
    let z = probe.encode(batch, Mode::Train, rng)?;
    let rms = (z.sum_sq() / z.data().len() as f64).sqrt().max(1e-6);
    let (k, d) = (model.codebook.k, model.codebook.d);
    let mut cb = Codebook::random(k, d, rms, rng);
    cb.decay = model.config.decay;
    cb.laplace_eps = model.config.laplace_eps;
    model.codebook = cb;
    Ok(())
}

pub fn train(
    model: &mut VqModel,
    train_set: &[TimeSeriesSample],
    validation: &[TimeSeriesSample],
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainReport, VqError> {
    cfg.validate()?;
    let eligible: Vec<&TimeSeriesSample> = train_set.iter().filter(|s| s.len() >= cfg.crop_length).collect();
    if eligible.is_empty() {
        return Err(VqError::InvalidConfig(format!(
            "no training sample reaches crop_length {}",
            cfg.crop_length
        )));
    }
    let mut rng = rng_for(seed, "vq/train");
    let mut adam = Adam::new(AdamConfig {
        lr: cfg.lr,
        weight_decay: cfg.weight_decay,
        clip_norm: Some(cfg.clip_norm),
        ..AdamConfig::default()
    });
    let mut plateau = PlateauScheduler::new(cfg.plateau_factor, cfg.plateau_patience);
    let mut stopper = cfg.early_stopping_patience.map(EarlyStopping::new);
    let mut records = Vec::with_capacity(cfg.epochs);
    let mut stopped_early = false;

    let first = crops(&eligible, cfg, &mut rng);
    let warm: Vec<(&TimeSeriesSample, Range<usize>)> =
        first.iter().take(cfg.batch_size).map(|(i, w)| (eligible[*i], w.clone())).collect();
    init_codebook(model, &Batch::from_windows(&warm)?, &mut rng)?;

    for epoch in 0..cfg.epochs {
        let windows = crops(&eligible, cfg, &mut rng);
        model.codebook.reset_usage();
        let (mut loss_sum, mut n_batches, mut max_norm) = (0.0, 0usize, 0.0f64);
        let mut perplexity_sum = 0.0;
        let mut donors = Vec::new();
        for (bi, chunk) in windows.chunks(cfg.batch_size).enumerate() {
            let pairs: Vec<(&TimeSeriesSample, Range<usize>)> =
                chunk.iter().map(|(i, w)| (eligible[*i], w.clone())).collect();
            let batch = Batch::from_windows(&pairs)?;
            model.zero_grad();
            let (br, fwd) = model.compute_gradients(&batch, &mut rng)?;
            if !br.total.is_finite() {
                return Err(VqError::NonFiniteLoss { epoch, batch: bi });
            }
            let step = {
                let mut params = model.params_mut();
                adam.step(&mut params).map_err(|e| VqError::Training {
                    epoch,
                    batch: bi,
                    detail: e.to_string(),
                })?
            };
            max_norm = max_norm.max(step.grad_norm);
            model.codebook.ema_update(&fwd.z_e, &fwd.quant.indices)?;
            model.codebook.record_usage(&fwd.quant.indices);
            donors = Codebook::positions(&fwd.z_e);
            loss_sum += br.total;
            perplexity_sum += br.perplexity;
            n_batches += 1;
        }
        let restarted = model
            .codebook
            .restart_dead_codes(model.config.restart_threshold, &donors, &mut rng)
            .len();
        let train_loss = loss_sum / n_batches as f64;
        let validation_loss = evaluate_samples(model, validation)?;
        let metric = validation_loss.unwrap_or(train_loss);
        if let Some(lr) = plateau.observe(metric, &mut adam) {
            info!("epoch {epoch}: learning rate reduced to {lr:e}");
        }
        let rec = EpochRecord {
            epoch,
            train_loss,
            validation_loss,
            lr: adam.lr(),
            perplexity: perplexity_sum / n_batches as f64,
            restarted,
            max_grad_norm: max_norm,
        };
        debug!("{rec:?}");
        records.push(rec);
        if let Some(s) = stopper.as_mut() {
            if s.observe(metric).1 {
                stopped_early = true;
                break;
            }
        }
    }
    Ok(TrainReport {
        epochs: records,
        stopped_early,
        optimizer: adam,
    })
}
