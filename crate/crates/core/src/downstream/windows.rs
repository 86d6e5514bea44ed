//! Seven-day embedding windows labelled with the eighth day's emotion.

use serde::{Deserialize, Serialize};

use super::DownstreamError;
use crate::numkernel::{Shape3, Tensor3};
use crate::vqmodel::{Codebook, ProfileSequence};

pub const WINDOW_DAYS: usize = 7;
pub const N_CLASSES: usize = 3;

/// How a day is turned into a vector.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DayEmbedding {
    /// Codeword of the day's assigned code.
    #[default]
    Hard,
    /// Profile probabilities mixing the top codewords; dummy mass goes to
    /// the day's own codeword.
    Mixture,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmotionWindow {
    pub patient_id: String,
    /// Day index of the labelled target.
    pub day: u32,
    /// `WINDOW_DAYS` rows of length `d`.
    pub rows: Vec<Vec<f64>>,
    pub label: u8,
}

impl EmotionWindow {
    pub fn dim(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }
}

fn day_vector(seq: &ProfileSequence, t: usize, codebook: &Codebook, mode: DayEmbedding) -> Vec<f64> {
    match mode {
        DayEmbedding::Hard => codebook.codeword(seq.codes[t]).to_vec(),
        DayEmbedding::Mixture => {
            let mut v = vec![0.0; codebook.d];
            for (j, &p) in seq.probs[t].iter().enumerate() {
                let code = seq.top_codes.get(j).copied().unwrap_or(seq.codes[t]);
                for (a, &e) in v.iter_mut().zip(codebook.codeword(code)) {
                    *a += p * e;
                }
            }
            v
        }
    }
}

/// `days[t]` is the record day of profile `t`; `labels` is indexed by
/// record day. Only days preceded by a full contiguous week yield windows.
pub fn build_windows(
    patient_id: &str,
    seq: &ProfileSequence,
    days: &[u32],
    labels: &[Option<u8>],
    codebook: &Codebook,
    mode: DayEmbedding,
) -> Result<Vec<EmotionWindow>, DownstreamError> {
    if days.len() != seq.len() {
        return Err(DownstreamError::Shape(format!("{} days for {} profiles", days.len(), seq.len())));
    }
    if let Some(&c) = seq.codes.iter().find(|&&c| c >= codebook.k) {
        return Err(DownstreamError::Shape(format!("code {c} outside codebook of size {}", codebook.k)));
    }
    if seq.probs.iter().any(|p| p.len() != seq.alphabet()) {
        return Err(DownstreamError::Shape("profile probabilities do not match the alphabet".into()));
    }
    let mut out = Vec::new();
    for t in WINDOW_DAYS..seq.len() {
        if days[t] - days[t - WINDOW_DAYS] != WINDOW_DAYS as u32 {
            continue;
        }
        let Some(Some(label)) = labels.get(days[t] as usize).copied() else {
            continue;
        };
        if label as usize >= N_CLASSES {
            return Err(DownstreamError::InvalidInput(format!("label {label} outside {N_CLASSES} classes")));
        }
        out.push(EmotionWindow {
            patient_id: patient_id.to_string(),
            day: days[t],
            rows: (t - WINDOW_DAYS..t).map(|i| day_vector(seq, i, codebook, mode)).collect(),
            label,
        });
    }
    Ok(out)
}

/// Stacks windows as `[B, 7, d]`.
pub fn windows_to_tensor(windows: &[&EmotionWindow]) -> Result<Tensor3, DownstreamError> {
    let d = windows.first().map_or(0, |w| w.dim());
    let mut data = Vec::with_capacity(windows.len() * WINDOW_DAYS * d);
    for w in windows {
        if w.rows.len() != WINDOW_DAYS || w.rows.iter().any(|r| r.len() != d) {
            return Err(DownstreamError::Shape(format!("window for {} day {} is not {WINDOW_DAYS}x{d}", w.patient_id, w.day)));
        }
        for r in &w.rows {
            data.extend_from_slice(r);
        }
    }
    Ok(Tensor3::from_vec(Shape3::new(windows.len(), WINDOW_DAYS, d), data)?)
}
