//! One-dimensional CNN over 7-day windows, the days acting as channels.

use log::debug;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::windows::{windows_to_tensor, EmotionWindow, N_CLASSES, WINDOW_DAYS};
use super::DownstreamError;
use crate::numkernel::loss::{cross_entropy, softmax_rows};
use crate::numkernel::{Adam, AdamConfig, Checkpoint, EarlyStopping, LayerSpec, Mode, Sequential, Shape3, Tensor3};
use crate::seed::rng_for;

const CHECKPOINT_KIND: &str = "emotion-cnn";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifierSpec {
    pub conv_channels: [usize; 2],
    pub hidden: usize,
    pub conv_dropout: f64,
    pub linear_dropout: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub validation_fraction: f64,
    pub lr: f64,
    pub weight_decay: f64,
    /// Weight cross-entropy terms by inverse class frequency.
    pub class_weights: bool,
}

impl Default for ClassifierSpec {
    fn default() -> Self {
        Self {
            conv_channels: [32, 64],
            hidden: 128,
            conv_dropout: 0.25,
            linear_dropout: 0.10,
            batch_size: 64,
            max_epochs: 100,
            patience: 10,
            validation_fraction: 0.3,
            lr: 1e-3,
            weight_decay: 1e-3,
            class_weights: false,
        }
    }
}

impl ClassifierSpec {
    pub fn validate(&self) -> Result<(), DownstreamError> {
        let bad = |m: &str| Err(DownstreamError::InvalidConfig(m.into()));
        if self.batch_size == 0 || self.max_epochs == 0 || self.hidden == 0 || self.conv_channels.contains(&0) {
            return bad("batch_size, max_epochs, hidden and conv_channels must be positive");
        }
        if !(0.0..1.0).contains(&self.conv_dropout) || !(0.0..1.0).contains(&self.linear_dropout) {
            return bad("dropout probabilities must lie in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return bad("validation_fraction must lie in [0, 1)");
        }
        if !(self.lr > 0.0 && self.weight_decay >= 0.0) {
            return bad("lr must be positive and weight_decay nonnegative");
        }
        Ok(())
    }
}

/// Conv, ReLU, max-pool, batchnorm, dropout twice; then linear, ReLU,
/// dropout and the 3-way output layer.
pub fn classifier_specs(d: usize, spec: &ClassifierSpec) -> Vec<LayerSpec> {
    let [c1, c2] = spec.conv_channels;
    let block = |cin: usize, cout: usize| {
        vec![
            LayerSpec::conv3(cin, cout),
            LayerSpec::Relu,
            LayerSpec::Maxpool1d { kernel: 2 },
            LayerSpec::Batchnorm1d { channels: cout },
            LayerSpec::Dropout { p: spec.conv_dropout },
        ]
    };
    let mut out = block(WINDOW_DAYS, c1);
    out.extend(block(c1, c2));
    out.extend([
        LayerSpec::Linear {
            in_features: c2 * (d / 4),
            out_features: spec.hidden,
        },
        LayerSpec::Relu,
        LayerSpec::Dropout { p: spec.linear_dropout },
        LayerSpec::Linear {
            in_features: spec.hidden,
            out_features: N_CLASSES,
        },
    ]);
    out
}

#[derive(Clone, Debug)]
pub struct EmotionCnn {
    pub d: usize,
    pub spec: ClassifierSpec,
    pub net: Sequential,
}

#[derive(Serialize, Deserialize)]
struct CnnMeta {
    kind: String,
    d: usize,
    spec: ClassifierSpec,
}

impl EmotionCnn {
    pub fn new(d: usize, spec: ClassifierSpec, seed: u64) -> Result<Self, DownstreamError> {
        spec.validate()?;
        if d < 4 {
            return Err(DownstreamError::InvalidConfig(format!("embedding dimension {d} is below 4")));
        }
        let net = Sequential::from_specs("emotion", &classifier_specs(d, &spec), &mut rng_for(seed, "emotion/init"));
        Ok(Self { d, spec, net })
    }

    pub fn logits(&self, x: &Tensor3) -> Result<Tensor3, DownstreamError> {
        Ok(self.net.infer(x)?)
    }

    /// Softmax class probabilities per window.
    pub fn predict(&self, windows: &[EmotionWindow]) -> Result<Vec<Vec<f64>>, DownstreamError> {
        self.predict_refs(&windows.iter().collect::<Vec<_>>())
    }

    pub fn predict_refs(&self, windows: &[&EmotionWindow]) -> Result<Vec<Vec<f64>>, DownstreamError> {
        let mut out = Vec::with_capacity(windows.len());
        for chunk in windows.chunks(256) {
            let x = self.input(chunk)?;
            let probs = softmax_rows(self.logits(&x)?.data(), N_CLASSES);
            out.extend(probs.chunks(N_CLASSES).map(<[f64]>::to_vec));
        }
        Ok(out)
    }

    fn input(&self, windows: &[&EmotionWindow]) -> Result<Tensor3, DownstreamError> {
        let x = windows_to_tensor(windows)?;
        if x.shape().len != self.d {
            return Err(DownstreamError::Shape(format!(
                "windows have dimension {}, classifier expects {}",
                x.shape().len,
                self.d
            )));
        }
        Ok(x)
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint, DownstreamError> {
        let meta = CnnMeta {
            kind: CHECKPOINT_KIND.into(),
            d: self.d,
            spec: self.spec.clone(),
        };
        let metadata = serde_json::to_value(meta).map_err(|e| DownstreamError::Checkpoint(e.to_string()))?;
        Ok(Checkpoint::new(self.net.params(), None, metadata))
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self, DownstreamError> {
        let meta: CnnMeta =
            serde_json::from_value(ckpt.metadata.clone()).map_err(|e| DownstreamError::Checkpoint(e.to_string()))?;
        if meta.kind != CHECKPOINT_KIND {
            return Err(DownstreamError::Checkpoint(format!("checkpoint kind {:?} is not an emotion classifier", meta.kind)));
        }
        let mut model = Self::new(meta.d, meta.spec, 0)?;
        ckpt.restore_into(model.net.params_mut())?;
        Ok(model)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmotionEpoch {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_loss: Option<f64>,
    pub train_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmotionReport {
    pub epochs: Vec<EmotionEpoch>,
    pub stopped_early: bool,
    /// Epoch whose weights were kept.
    pub best_epoch: usize,
    pub n_train: usize,
    pub n_validation: usize,
}

fn class_weights(labels: &[usize]) -> Vec<f64> {
    let mut counts = [0usize; N_CLASSES];
    for &y in labels {
        counts[y] += 1;
    }
    let present = counts.iter().filter(|&&c| c > 0).count() as f64;
    counts
        .iter()
        .map(|&c| if c == 0 { 0.0 } else { labels.len() as f64 / (present * c as f64) })
        .collect()
}

fn mean_loss(model: &EmotionCnn, windows: &[&EmotionWindow], weights: Option<&[f64]>) -> Result<f64, DownstreamError> {
    let labels: Vec<usize> = windows.iter().map(|w| w.label as usize).collect();
    let logits = model.logits(&model.input(windows)?)?;
    Ok(cross_entropy(logits.data(), &labels, N_CLASSES, weights)?.value)
}

pub fn accuracy(probs: &[Vec<f64>], labels: &[usize]) -> f64 {
    let hits = probs
        .iter()
        .zip(labels)
        .filter(|(p, &y)| p.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).map(|(i, _)| i) == Some(y))
        .count();
    hits as f64 / labels.len().max(1) as f64
}

/// Trains on a random split of `windows`, keeping the weights of the epoch
/// with the lowest validation loss (training loss without a validation
/// split).
pub fn train_emotion_cnn(
    windows: &[EmotionWindow],
    spec: &ClassifierSpec,
    seed: u64,
) -> Result<(EmotionCnn, EmotionReport), DownstreamError> {
    spec.validate()?;
    let mut classes: Vec<u8> = windows.iter().map(|w| w.label).collect();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(DownstreamError::SingleClass);
    }
    let d = windows[0].dim();
    let mut model = EmotionCnn::new(d, spec.clone(), seed)?;
    let mut rng = rng_for(seed, "emotion/train");
    let mut order: Vec<usize> = (0..windows.len()).collect();
    order.shuffle(&mut rng);
    let n_val = (spec.validation_fraction * windows.len() as f64).round() as usize;
    let (val_idx, train_idx) = order.split_at(n_val.min(windows.len() - 1));
    let train_set: Vec<&EmotionWindow> = train_idx.iter().map(|&i| &windows[i]).collect();
    let val_set: Vec<&EmotionWindow> = val_idx.iter().map(|&i| &windows[i]).collect();
    let train_labels: Vec<usize> = train_set.iter().map(|w| w.label as usize).collect();
    let weights = spec.class_weights.then(|| class_weights(&train_labels));

    let mut adam = Adam::new(AdamConfig {
        lr: spec.lr,
        weight_decay: spec.weight_decay,
        ..AdamConfig::default()
    });
    let mut stopper = EarlyStopping::new(spec.patience.max(1));
    let mut best = (model.net.clone(), 0usize);
    let mut epochs = Vec::new();
    let mut stopped_early = false;
    let mut batch_order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 0..spec.max_epochs {
        batch_order.shuffle(&mut rng);
        let (mut loss_sum, mut seen) = (0.0, 0usize);
        for chunk in batch_order.chunks(spec.batch_size) {
            let batch: Vec<&EmotionWindow> = chunk.iter().map(|&i| train_set[i]).collect();
            let labels: Vec<usize> = batch.iter().map(|w| w.label as usize).collect();
            let x = model.input(&batch)?;
            let logits = model.net.forward(&x, Mode::Train, &mut rng)?;
            let loss = cross_entropy(logits.data(), &labels, N_CLASSES, weights.as_deref())?;
            for p in model.net.params_mut() {
                p.zero_grad();
            }
            model.net.backward(&Tensor3::from_vec(Shape3::new(batch.len(), N_CLASSES, 1), loss.grad)?)?;
            let mut params: Vec<_> = model.net.params_mut().collect();
            adam.step(&mut params)?;
            loss_sum += loss.value * batch.len() as f64;
            seen += batch.len();
        }
        let train_loss = loss_sum / seen as f64;
        let validation_loss = if val_set.is_empty() {
            None
        } else {
            Some(mean_loss(&model, &val_set, weights.as_deref())?)
        };
        let train_accuracy = accuracy(&model.predict_refs(&train_set)?, &train_labels);
        let metric = validation_loss.unwrap_or(train_loss);
        if !metric.is_finite() {
            return Err(DownstreamError::Training(format!("non-finite loss at epoch {epoch}")));
        }
        let rec = EmotionEpoch {
            epoch,
            train_loss,
            validation_loss,
            train_accuracy,
        };
        debug!("{rec:?}");
        epochs.push(rec);
        let (improved, stop) = stopper.observe(metric);
        if improved {
            best = (model.net.clone(), epoch);
        }
        if stop {
            stopped_early = true;
            break;
        }
    }
    model.net = best.0;
    Ok((
        model,
        EmotionReport {
            epochs,
            stopped_early,
            best_epoch: best.1,
            n_train: train_set.len(),
            n_validation: val_set.len(),
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_the_published_classifier() {
        let s = ClassifierSpec::default();
        assert_eq!((s.batch_size, s.max_epochs, s.patience), (64, 100, 10));
        assert_eq!((s.lr, s.weight_decay, s.validation_fraction), (1e-3, 1e-3, 0.3));
        assert_eq!((s.conv_dropout, s.linear_dropout), (0.25, 0.10));
        let kinds: Vec<&str> = classifier_specs(80, &s).iter().map(|l| l.kind_name()).collect();
        assert_eq!(
            kinds,
            [
                "conv1d", "relu", "maxpool1d", "batchnorm1d", "dropout", "conv1d", "relu", "maxpool1d", "batchnorm1d",
                "dropout", "linear", "relu", "dropout", "linear"
            ]
        );
    }

    #[test]
    fn output_is_a_distribution_over_three_classes() {
        let m = EmotionCnn::new(16, ClassifierSpec::default(), 1).unwrap();
        let out = m.net.output_shape(Shape3::new(5, WINDOW_DAYS, 16)).unwrap();
        assert_eq!((out.channels, out.len), (3, 1));
        let w = EmotionWindow {
            patient_id: "p".into(),
            day: 8,
            rows: vec![vec![0.3; 16]; 7],
            label: 0,
        };
        for p in m.predict(&[w]).unwrap() {
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn single_class_is_rejected() {
        let w = EmotionWindow {
            patient_id: "p".into(),
            day: 8,
            rows: vec![vec![0.0; 8]; 7],
            label: 1,
        };
        assert!(matches!(
            train_emotion_cnn(&[w.clone(), w], &ClassifierSpec::default(), 0),
            Err(DownstreamError::SingleClass)
        ));
    }
}
