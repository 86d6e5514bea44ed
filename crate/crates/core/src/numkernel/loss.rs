//! Scalar losses with per-element contributions and gradients.

use serde::{Deserialize, Serialize};

use super::KernelError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    MaskedMse,
    WeightedBceLogits,
    CrossEntropy,
}

/// Result of evaluating a loss.
///
/// `contributions` sums to `value`; `grad` is `d value / d prediction`.
/// `empty` is set when no element was eligible (fully masked input), in
/// which case the loss and its gradient are exactly zero.
#[derive(Clone, Debug, PartialEq)]
pub struct LossOutput {
    pub value: f64,
    pub contributions: Vec<f64>,
    pub grad: Vec<f64>,
    pub empty: bool,
}

impl LossOutput {
    fn empty(n: usize) -> Self {
        Self {
            value: 0.0,
            contributions: vec![0.0; n],
            grad: vec![0.0; n],
            empty: true,
        }
    }
}

fn check_lengths(what: &str, a: usize, b: usize) -> Result<(), KernelError> {
    if a != b {
        return Err(KernelError::ShapeMismatch {
            layer: what.into(),
            expected: format!("{a} elements"),
            got: format!("{b} elements"),
        });
    }
    Ok(())
}

/// Mean squared error over entries where `observed` is true.
///
/// Values of `prediction` and `target` at unobserved positions are never
/// read, so they may hold anything (including NaN).
pub fn masked_mse(prediction: &[f64], target: &[f64], observed: &[bool]) -> Result<LossOutput, KernelError> {
    check_lengths("masked_mse target", prediction.len(), target.len())?;
    check_lengths("masked_mse mask", prediction.len(), observed.len())?;
    let n = observed.iter().filter(|&&m| m).count();
    if n == 0 {
        return Ok(LossOutput::empty(prediction.len()));
    }
    let inv = 1.0 / n as f64;
    let mut out = LossOutput::empty(prediction.len());
    out.empty = false;
    for i in 0..prediction.len() {
        if observed[i] {
            let diff = prediction[i] - target[i];
            out.contributions[i] = diff * diff * inv;
            out.grad[i] = 2.0 * diff * inv;
            out.value += out.contributions[i];
        }
    }
    Ok(out)
}

/// Class weights `n / (2 n_c)` for a binary target over observed entries.
///
/// Falls back to unit weights when a class is absent.
pub fn balanced_binary_weights(target: &[f64], observed: &[bool]) -> (f64, f64) {
    let (mut pos, mut neg) = (0usize, 0usize);
    for (&t, &m) in target.iter().zip(observed) {
        if m {
            if t > 0.5 {
                pos += 1
            } else {
                neg += 1
            }
        }
    }
    if pos == 0 || neg == 0 {
        return (1.0, 1.0);
    }
    let n = (pos + neg) as f64;
    (n / (2.0 * neg as f64), n / (2.0 * pos as f64))
}

/// Class-balanced binary cross-entropy on logits over observed entries.
pub fn weighted_bce_logits(logits: &[f64], target: &[f64], observed: &[bool]) -> Result<LossOutput, KernelError> {
    let (w_neg, w_pos) = balanced_binary_weights(target, observed);
    bce_logits_with_weights(logits, target, observed, w_neg, w_pos)
}

/// Binary cross-entropy on logits with explicit negative/positive weights.
pub fn bce_logits_with_weights(
    logits: &[f64],
    target: &[f64],
    observed: &[bool],
    w_neg: f64,
    w_pos: f64,
) -> Result<LossOutput, KernelError> {
    check_lengths("bce target", logits.len(), target.len())?;
    check_lengths("bce mask", logits.len(), observed.len())?;
    let n = observed.iter().filter(|&&m| m).count();
    if n == 0 {
        return Ok(LossOutput::empty(logits.len()));
    }
    let inv = 1.0 / n as f64;
    let mut out = LossOutput::empty(logits.len());
    out.empty = false;
    for i in 0..logits.len() {
        if !observed[i] {
            continue;
        }
        let z = logits[i];
        let y = if target[i] > 0.5 { 1.0 } else { 0.0 };
        let w = if y > 0.5 { w_pos } else { w_neg };
        // softplus(z) - y z, evaluated stably
        let l = z.max(0.0) - z * y + (-z.abs()).exp().ln_1p();
        out.contributions[i] = w * l * inv;
        out.grad[i] = w * (sigmoid(z) - y) * inv;
        out.value += out.contributions[i];
    }
    Ok(out)
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Row-wise softmax of an `n x k` row-major matrix.
pub fn softmax_rows(logits: &[f64], k: usize) -> Vec<f64> {
    let mut out = vec![0.0; logits.len()];
    for (row, dst) in logits.chunks(k).zip(out.chunks_mut(k)) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (d, &z) in dst.iter_mut().zip(row) {
            *d = (z - max).exp();
            sum += *d;
        }
        dst.iter_mut().for_each(|d| *d /= sum);
    }
    out
}

/// Mean (optionally class-weighted) cross-entropy of `n x k` logits.
///
/// With class weights, the mean is normalized by the total weight of the
/// batch, matching the usual weighted-mean convention.
pub fn cross_entropy(
    logits: &[f64],
    labels: &[usize],
    k: usize,
    class_weights: Option<&[f64]>,
) -> Result<LossOutput, KernelError> {
    check_lengths("cross_entropy labels", logits.len(), labels.len() * k)?;
    if let Some(w) = class_weights {
        check_lengths("cross_entropy weights", k, w.len())?;
    }
    if labels.is_empty() {
        return Ok(LossOutput::empty(logits.len()));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
        return Err(KernelError::InvalidInput(format!("label {bad} outside {k} classes")));
    }
    let probs = softmax_rows(logits, k);
    let weight = |y: usize| class_weights.map_or(1.0, |w| w[y]);
    let total: f64 = labels.iter().map(|&y| weight(y)).sum();
    let mut out = LossOutput::empty(logits.len());
    out.empty = false;
    for (i, &y) in labels.iter().enumerate() {
        let w = weight(y) / total;
        let row = &probs[i * k..(i + 1) * k];
        let l = -row[y].max(f64::MIN_POSITIVE).ln();
        out.contributions[i * k + y] = w * l;
        out.value += w * l;
        for c in 0..k {
            let indicator = if c == y { 1.0 } else { 0.0 };
            out.grad[i * k + c] = w * (row[c] - indicator);
        }
    }
    Ok(out)
}

/// Dispatches on [`LossKind`]; for cross-entropy `target` holds class
/// indices and `k` is the class count.
pub fn loss_eval(
    kind: LossKind,
    prediction: &[f64],
    target: &[f64],
    observed: Option<&[bool]>,
    k: usize,
) -> Result<LossOutput, KernelError> {
    match kind {
        LossKind::MaskedMse => {
            let mask = observed.ok_or_else(|| KernelError::InvalidInput("masked_mse requires a mask".into()))?;
            masked_mse(prediction, target, mask)
        }
        LossKind::WeightedBceLogits => {
            let all;
            let mask = match observed {
                Some(m) => m,
                None => {
                    all = vec![true; prediction.len()];
                    &all
                }
            };
            weighted_bce_logits(prediction, target, mask)
        }
        LossKind::CrossEntropy => {
            let labels: Vec<usize> = target.iter().map(|&t| t as usize).collect();
            cross_entropy(prediction, &labels, k, None)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn masked_mse_reads_only_observed_entries() {
        let pred = [1.0, 5.0, 0.0];
        let target = [1.0, 0.0, 7.0];
        let mask = [false, true, false];
        let out = masked_mse(&pred, &target, &mask).unwrap();
        assert_eq!(out.value, 25.0);
        assert_eq!(out.grad, vec![0.0, 10.0, 0.0]);
        // masked errors of any size do not matter
        let out2 = masked_mse(&[1e9, 5.0, f64::NAN], &[-3.0, 0.0, 2.0], &mask).unwrap();
        assert_eq!(out2.value, out.value);
    }

    #[test]
    fn masked_mse_single_entry_derivative() {
        let out = masked_mse(&[3.0], &[1.0], &[true]).unwrap();
        assert_eq!(out.grad[0], 4.0);
    }

    #[test]
    fn masked_mse_empty_set_is_zero_and_flagged() {
        let out = masked_mse(&[3.0, 2.0], &[1.0, 1.0], &[false, false]).unwrap();
        assert!(out.empty);
        assert_eq!(out.value, 0.0);
        assert!(out.grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn balanced_bce_equals_plain_bce() {
        let logits = [0.3, -1.2, 2.0, 0.1, -0.4, 1.7];
        let target = [1.0, 0.0, 1.0, 0.0, 1.0, 0.0];
        let mask = [true; 6];
        let weighted = weighted_bce_logits(&logits, &target, &mask).unwrap();
        let plain = bce_logits_with_weights(&logits, &target, &mask, 1.0, 1.0).unwrap();
        assert!((weighted.value - plain.value).abs() < 1e-12);
        let direct: f64 = logits
            .iter()
            .zip(&target)
            .map(|(&z, &y)| -(y * sigmoid(z).ln() + (1.0 - y) * (1.0 - sigmoid(z)).ln()))
            .sum::<f64>()
            / 6.0;
        assert!((plain.value - direct).abs() < 1e-12);
    }

    #[test]
    fn imbalanced_bce_upweights_minority() {
        let (w_neg, w_pos) = balanced_binary_weights(&[1.0, 0.0, 0.0, 0.0], &[true; 4]);
        assert_eq!(w_pos, 2.0);
        assert!((w_neg - 4.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn uniform_three_class_cross_entropy_is_ln3() {
        let out = cross_entropy(&[0.0, 0.0, 0.0], &[1], 3, None).unwrap();
        assert!((out.value - 3f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn cross_entropy_rejects_out_of_range_label() {
        assert!(cross_entropy(&[0.0, 0.0], &[2], 2, None).is_err());
    }
}
