//! Per-sample profile sequences: codes ranked by frequency, the tail folded
//! into a dummy profile.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::arch::{Batch, VqModel};
use super::VqError;
use crate::datagen::TimeSeriesSample;
use crate::numkernel::checkpoint::write_atomic;

/// Profile ids `0..top_codes.len()` follow frequency rank; the id
/// `top_codes.len()` is the dummy profile.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileSequence {
    pub sample: String,
    pub top_codes: Vec<usize>,
    pub codes: Vec<usize>,
    pub ids: Vec<usize>,
    /// Per-day distribution over the `alphabet()` profiles.
    pub probs: Vec<Vec<f64>>,
    pub distinct_codes: usize,
}

impl ProfileSequence {
    pub fn alphabet(&self) -> usize {
        self.top_codes.len() + 1
    }

    pub fn dummy(&self) -> usize {
        self.top_codes.len()
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Most frequent codes first, ties broken by lower code index.
pub fn rank_codes(indices: &[usize], m: usize) -> Vec<usize> {
    let mut counts: Vec<(usize, usize)> = Vec::new();
    for &c in indices {
        match counts.iter_mut().find(|(k, _)| *k == c) {
            Some(e) => e.1 += 1,
            None => counts.push((c, 1)),
        }
    }
    counts.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    counts.into_iter().take(m).map(|(c, _)| c).collect()
}

/// Compresses per-day codes and code distributions to the top `m` codes.
/// Without `pseudo`, each day's distribution is one-hot on its profile.
pub fn profile_sequence(
    sample: &str,
    indices: &[usize],
    pseudo: Option<&[Vec<f64>]>,
    m: usize,
) -> Result<ProfileSequence, VqError> {
    if let Some(p) = pseudo {
        if p.len() != indices.len() {
            return Err(VqError::Shape(format!("{} codes but {} probability vectors", indices.len(), p.len())));
        }
    }
    let top = rank_codes(indices, m);
    let dummy = top.len();
    let id_of = |c: usize| top.iter().position(|&t| t == c).unwrap_or(dummy);
    let ids: Vec<usize> = indices.iter().map(|&c| id_of(c)).collect();
    let probs = match pseudo {
        Some(p) => p
            .iter()
            .map(|v| {
                let mut out = vec![0.0; dummy + 1];
                for (c, &x) in v.iter().enumerate() {
                    out[id_of(c)] += x;
                }
                let s: f64 = out.iter().sum();
                out.iter_mut().for_each(|x| *x /= s);
                out
            })
            .collect(),
        None => ids
            .iter()
            .map(|&i| {
                let mut out = vec![0.0; dummy + 1];
                out[i] = 1.0;
                out
            })
            .collect(),
    };
    let mut distinct = indices.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    Ok(ProfileSequence {
        sample: sample.to_string(),
        top_codes: top,
        codes: indices.to_vec(),
        ids,
        probs,
        distinct_codes: distinct.len(),
    })
}

/// Runs the frozen encoder over a full-length scaled sample.
pub fn extract_profiles(model: &VqModel, sample: &TimeSeriesSample, m: usize) -> Result<ProfileSequence, VqError> {
    let batch = Batch::from_sample(sample)?;
    let z_e = model.encode_infer(&batch)?;
    let q = model.codebook.quantize(&z_e)?;
    let pseudo = model.codebook.pseudo_probabilities(&z_e)?;
    profile_sequence(&sample.key(), &q.indices, Some(&pseudo), m)
}

fn csv_err(path: &Path, e: impl std::fmt::Display) -> VqError {
    VqError::Format(format!("{}: {e}", path.display()))
}

/// Columns `day,profile,code,p_0..p_K` where `p_K` is the dummy profile.
pub fn write_profile_csv(path: &Path, seq: &ProfileSequence) -> Result<(), VqError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["day".to_string(), "profile".into(), "code".into()];
    header.extend((0..seq.alphabet()).map(|j| format!("p_{j}")));
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for t in 0..seq.len() {
        let mut row = vec![t.to_string(), seq.ids[t].to_string(), seq.codes[t].to_string()];
        row.extend(seq.probs[t].iter().map(|p| format!("{p:?}")));
        w.write_record(&row).map_err(|e| csv_err(path, e))?;
    }
    write_atomic(path, &w.into_inner().map_err(|e| csv_err(path, e))?)?;
    Ok(())
}

pub fn read_profile_csv(path: &Path, sample: &str) -> Result<ProfileSequence, VqError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let k = r.headers().map_err(|e| csv_err(path, e))?.len().saturating_sub(3);
    if k == 0 {
        return Err(csv_err(path, "no probability columns"));
    }
    let (mut ids, mut codes, mut probs) = (Vec::new(), Vec::new(), Vec::new());
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let num = |i: usize| rec.get(i).and_then(|v| v.parse::<usize>().ok()).ok_or_else(|| csv_err(path, "bad integer"));
        ids.push(num(1)?);
        codes.push(num(2)?);
        probs.push(
            (3..3 + k)
                .map(|i| rec.get(i).and_then(|v| v.parse::<f64>().ok()).ok_or_else(|| csv_err(path, "bad probability")))
                .collect::<Result<Vec<f64>, _>>()?,
        );
    }
    if ids.iter().any(|&i| i >= k) {
        return Err(csv_err(path, "profile id outside alphabet"));
    }
    let mut top = vec![usize::MAX; k - 1];
    for (&i, &c) in ids.iter().zip(&codes) {
        if i < k - 1 {
            top[i] = c;
        }
    }
    let mut distinct = codes.clone();
    distinct.sort_unstable();
    distinct.dedup();
    Ok(ProfileSequence {
        sample: sample.to_string(),
        top_codes: top,
        codes,
        ids,
        probs,
        distinct_codes: distinct.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn few_codes_leave_dummy_empty() {
        let p = profile_sequence("s", &[7, 7, 3, 9, 3, 7], None, 5).unwrap();
        assert_eq!(p.top_codes, vec![7, 3, 9]);
        assert_eq!(p.ids, vec![0, 0, 1, 2, 1, 0]);
        assert!(!p.ids.contains(&p.dummy()));
        assert_eq!(p.alphabet(), 4);
    }

    #[test]
    fn rare_code_goes_to_dummy() {
        let mut codes: Vec<usize> = (0..179).map(|t| t % 5).collect();
        codes.push(42);
        let p = profile_sequence("s", &codes, None, 5).unwrap();
        assert_eq!(p.ids[179], p.dummy());
        assert_eq!(p.distinct_codes, 6);
    }

    #[test]
    fn probabilistic_mode_folds_tail_mass() {
        let pseudo = vec![vec![0.5, 0.3, 0.2], vec![0.1, 0.6, 0.3]];
        let p = profile_sequence("s", &[0, 1], Some(&pseudo), 1).unwrap();
        assert_eq!(p.top_codes, vec![0]);
        assert!((p.probs[0][0] - 0.5).abs() < 1e-15 && (p.probs[0][1] - 0.5).abs() < 1e-15);
        for v in &p.probs {
            assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn csv_round_trip() {
        let pseudo = vec![vec![0.5, 0.3, 0.2], vec![0.1, 0.6, 0.3], vec![0.2, 0.2, 0.6]];
        let p = profile_sequence("s", &[0, 1, 2], Some(&pseudo), 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        write_profile_csv(&path, &p).unwrap();
        assert_eq!(read_profile_csv(&path, "s").unwrap(), p);
    }
}
