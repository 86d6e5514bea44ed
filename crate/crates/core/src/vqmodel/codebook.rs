//! Vector quantizer: nearest-codeword lookup, EMA codebook updates and
//! dead-code restarts.

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::numkernel::{KernelRng, Parameter, Shape3, Tensor3};

use super::VqError;

pub const DEFAULT_DECAY: f64 = 0.99;
pub const DEFAULT_LAPLACE_EPS: f64 = 1e-5;
pub const DEFAULT_RESTART_THRESHOLD: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Codebook {
    pub k: usize,
    pub d: usize,
    /// Row-major `k x d`.
    pub embeddings: Vec<f64>,
    pub ema_count: Vec<f64>,
    pub ema_sum: Vec<f64>,
    pub decay: f64,
    pub laplace_eps: f64,
    /// Assignments since the last [`Codebook::reset_usage`].
    pub usage: Vec<u64>,
}

/// Output of [`Codebook::quantize`]. Positions are ordered `(batch, time)`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantizeResult {
    pub indices: Vec<usize>,
    pub z_q: Tensor3,
    /// Euclidean distances, `positions x k`.
    pub distances: Vec<f64>,
    pub perplexity: f64,
}

impl Codebook {
    pub fn new(k: usize, d: usize, embeddings: Vec<f64>) -> Result<Self, VqError> {
        if k == 0 || d == 0 || embeddings.len() != k * d {
            return Err(VqError::Shape(format!("codebook {k}x{d} with {} values", embeddings.len())));
        }
        Ok(Self {
            k,
            d,
            embeddings,
            ema_count: vec![0.0; k],
            ema_sum: vec![0.0; k * d],
            decay: DEFAULT_DECAY,
            laplace_eps: DEFAULT_LAPLACE_EPS,
            usage: vec![0; k],
        })
    }

    /// I.i.d. `N(0, scale^2)` entries.
    pub fn random(k: usize, d: usize, scale: f64, rng: &mut KernelRng) -> Self {
        let e = (0..k * d).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect();
        Self::new(k, d, e).expect("valid shape")
    }

    pub fn codeword(&self, j: usize) -> &[f64] {
        &self.embeddings[j * self.d..(j + 1) * self.d]
    }

    /// Squared distance to every codeword.
    pub fn sq_distances(&self, v: &[f64]) -> Vec<f64> {
        (0..self.k)
            .map(|j| self.codeword(j).iter().zip(v).map(|(e, x)| (x - e) * (x - e)).sum())
            .collect()
    }

    /// Index of the nearest codeword; ties resolve to the lowest index.
    pub fn nearest(&self, v: &[f64]) -> (usize, f64) {
        let mut best = (0, f64::INFINITY);
        for (j, d) in self.sq_distances(v).into_iter().enumerate() {
            if d < best.1 {
                best = (j, d);
            }
        }
        best
    }

    fn check(&self, z_e: &Tensor3) -> Result<(), VqError> {
        if z_e.shape().channels != self.d {
            return Err(VqError::Shape(format!(
                "encoder output has {} channels, codebook dimension is {}",
                z_e.shape().channels,
                self.d
            )));
        }
        Ok(())
    }

    /// Vectors of `z_e` in `(batch, time)` order.
    pub fn positions(z_e: &Tensor3) -> Vec<Vec<f64>> {
        let s = z_e.shape();
        let mut out = Vec::with_capacity(s.batch * s.len);
        for b in 0..s.batch {
            for t in 0..s.len {
                out.push((0..s.channels).map(|c| z_e.get(b, c, t)).collect());
            }
        }
        out
    }

    pub fn quantize(&self, z_e: &Tensor3) -> Result<QuantizeResult, VqError> {
        self.check(z_e)?;
        let s = z_e.shape();
        let mut z_q = Tensor3::zeros(s);
        let mut indices = Vec::with_capacity(s.batch * s.len);
        let mut distances = Vec::with_capacity(s.batch * s.len * self.k);
        for (p, v) in Self::positions(z_e).iter().enumerate() {
            let sq = self.sq_distances(v);
            let mut best = (0, f64::INFINITY);
            for (j, &d) in sq.iter().enumerate() {
                if d < best.1 {
                    best = (j, d);
                }
            }
            distances.extend(sq.iter().map(|d| d.sqrt()));
            let (b, t) = (p / s.len, p % s.len);
            for (c, &e) in self.codeword(best.0).iter().enumerate() {
                z_q.set(b, c, t, e);
            }
            indices.push(best.0);
        }
        let perplexity = perplexity(&indices, self.k);
        Ok(QuantizeResult {
            indices,
            z_q,
            distances,
            perplexity,
        })
    }

    /// One EMA step from a batch of assignments. Codes with no assignment in
    /// this batch keep their codeword; `decay >= 1` freezes the codebook.
    pub fn ema_update(&mut self, z_e: &Tensor3, indices: &[usize]) -> Result<(), VqError> {
        self.check(z_e)?;
        let positions = Self::positions(z_e);
        if positions.len() != indices.len() {
            return Err(VqError::Shape(format!("{} positions, {} assignments", positions.len(), indices.len())));
        }
        if self.decay >= 1.0 {
            return Ok(());
        }
        let (k, d, g) = (self.k, self.d, self.decay);
        let mut counts = vec![0.0; k];
        let mut sums = vec![0.0; k * d];
        for (v, &j) in positions.iter().zip(indices) {
            counts[j] += 1.0;
            for (s, x) in sums[j * d..(j + 1) * d].iter_mut().zip(v) {
                *s += x;
            }
        }
        for j in 0..k {
            self.ema_count[j] = g * self.ema_count[j] + (1.0 - g) * counts[j];
        }
        for (m, s) in self.ema_sum.iter_mut().zip(&sums) {
            *m = g * *m + (1.0 - g) * s;
        }
        let n: f64 = self.ema_count.iter().sum();
        for j in 0..k {
            if counts[j] == 0.0 {
                continue;
            }
            let smoothed = (self.ema_count[j] + self.laplace_eps) / (n + k as f64 * self.laplace_eps) * n;
            for c in 0..d {
                self.embeddings[j * d + c] = self.ema_sum[j * d + c] / smoothed;
            }
        }
        Ok(())
    }

    pub fn record_usage(&mut self, indices: &[usize]) {
        for &j in indices {
            self.usage[j] += 1;
        }
    }

    pub fn reset_usage(&mut self) {
        self.usage.iter_mut().for_each(|u| *u = 0);
    }

    /// `usage_j * k / total`: 1 for uniform use, 0 for a dead code.
    pub fn usage_ratios(&self) -> Vec<f64> {
        let total: u64 = self.usage.iter().sum();
        if total == 0 {
            return vec![0.0; self.k];
        }
        self.usage.iter().map(|&u| u as f64 * self.k as f64 / total as f64).collect()
    }

    /// Reinitializes every code whose usage ratio is below `threshold` to a
    /// random donor vector and clears its EMA state. Returns restarted indices.
    pub fn restart_dead_codes(&mut self, threshold: f64, donors: &[Vec<f64>], rng: &mut KernelRng) -> Vec<usize> {
        if threshold <= 0.0 || donors.is_empty() {
            return Vec::new();
        }
        let ratios = self.usage_ratios();
        let mut restarted = Vec::new();
        for (j, &r) in ratios.iter().enumerate() {
            if r < threshold {
                let donor = donors.choose(rng).expect("non-empty donors");
                self.embeddings[j * self.d..(j + 1) * self.d].copy_from_slice(donor);
                self.ema_count[j] = 0.0;
                self.ema_sum[j * self.d..(j + 1) * self.d].iter_mut().for_each(|m| *m = 0.0);
                restarted.push(j);
            }
        }
        restarted
    }

    /// Softmax of negative Euclidean distances, one vector per position.
    pub fn pseudo_probabilities(&self, z_e: &Tensor3) -> Result<Vec<Vec<f64>>, VqError> {
        self.check(z_e)?;
        Ok(Self::positions(z_e)
            .iter()
            .map(|v| {
                let neg: Vec<f64> = self.sq_distances(v).into_iter().map(|d| -d.sqrt()).collect();
                softmax(&neg)
            })
            .collect())
    }

    pub fn to_parameters(&self) -> Vec<Parameter> {
        vec![
            Parameter::buffer("codebook.embeddings", vec![self.k, self.d], self.embeddings.clone()),
            Parameter::buffer("codebook.ema_count", vec![self.k], self.ema_count.clone()),
            Parameter::buffer("codebook.ema_sum", vec![self.k, self.d], self.ema_sum.clone()),
        ]
    }

    pub fn load_parameters(&mut self, params: &[Parameter]) -> Result<(), VqError> {
        for p in params {
            let (dst, shape) = match p.name.as_str() {
                "codebook.embeddings" => (&mut self.embeddings, vec![self.k, self.d]),
                "codebook.ema_count" => (&mut self.ema_count, vec![self.k]),
                "codebook.ema_sum" => (&mut self.ema_sum, vec![self.k, self.d]),
                _ => continue,
            };
            if p.shape != shape {
                return Err(VqError::Shape(format!("{}: shape {:?}, expected {shape:?}", p.name, p.shape)));
            }
            dst.copy_from_slice(&p.value);
        }
        Ok(())
    }
}

pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = xs.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// `exp(entropy)` of the empirical code distribution.
pub fn perplexity(indices: &[usize], k: usize) -> f64 {
    if indices.is_empty() {
        return 1.0;
    }
    let mut counts = vec![0usize; k];
    for &j in indices {
        counts[j] += 1;
    }
    let n = indices.len() as f64;
    let h: f64 = counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum();
    h.exp()
}

/// Builds a `[1, d, n]` tensor from position vectors.
pub fn positions_to_tensor(vs: &[Vec<f64>]) -> Tensor3 {
    let d = vs.first().map_or(0, |v| v.len());
    let mut t = Tensor3::zeros(Shape3::new(1, d, vs.len()));
    for (p, v) in vs.iter().enumerate() {
        for (c, &x) in v.iter().enumerate() {
            t.set(0, c, p, x);
        }
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_for;

    fn book(rows: &[&[f64]]) -> Codebook {
        Codebook::new(rows.len(), rows[0].len(), rows.iter().flat_map(|r| r.to_vec()).collect()).unwrap()
    }

    #[test]
    fn exact_codeword_has_zero_distance() {
        let cb = book(&[&[0.0, 0.0], &[1.0, 0.0], &[0.0, 1.0], &[2.0, 2.0]]);
        let q = cb.quantize(&positions_to_tensor(&[vec![2.0, 2.0]])).unwrap();
        assert_eq!(q.indices, vec![3]);
        assert_eq!(q.distances[3], 0.0);
        assert_eq!(q.z_q.data(), &[2.0, 2.0]);
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let cb = book(&[&[1.0], &[-1.0]]);
        assert_eq!(cb.nearest(&[0.0]).0, 0);
    }

    #[test]
    fn random_queries_match_exhaustive_scan() {
        let mut rng = rng_for(4, "vq-test");
        let cb = Codebook::random(8, 5, 1.0, &mut rng);
        for _ in 0..500 {
            let v: Vec<f64> = (0..5).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let brute = (0..8)
                .map(|j| (j, cb.codeword(j).iter().zip(&v).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()))
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .unwrap()
                .0;
            assert_eq!(cb.nearest(&v).0, brute);
        }
    }

    #[test]
    fn perplexity_bounds() {
        assert_eq!(perplexity(&[2, 2, 2], 4), 1.0);
        assert!((perplexity(&[0, 1, 2, 3], 4) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn ema_converges_to_planted_mean() {
        let mut rng = rng_for(5, "vq-test");
        let mut cb = Codebook::random(16, 3, 1.0, &mut rng);
        let p = vec![vec![0.7, -1.2, 2.5]; 32];
        let z = positions_to_tensor(&p);
        for _ in 0..200 {
            cb.ema_update(&z, &[4; 32]).unwrap();
        }
        let err: f64 = cb.codeword(4).iter().zip(&p[0]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        assert!(err < 1e-3, "{err}");
    }

    #[test]
    fn frozen_and_empty_codes_do_not_move() {
        let mut rng = rng_for(6, "vq-test");
        let mut cb = Codebook::random(4, 2, 1.0, &mut rng);
        let before = cb.embeddings.clone();
        let z = positions_to_tensor(&[vec![5.0, 5.0]]);
        cb.ema_update(&z, &[1]).unwrap();
        assert_eq!(cb.codeword(0), &before[0..2]);
        assert_eq!(cb.codeword(2), &before[4..6]);
        let mut frozen = Codebook::random(4, 2, 1.0, &mut rng);
        frozen.decay = 1.0;
        let snap = frozen.clone();
        frozen.ema_update(&z, &[1]).unwrap();
        assert_eq!(frozen, snap);
    }

    #[test]
    fn restart_replaces_only_dead_codes() {
        let mut rng = rng_for(7, "vq-test");
        let mut cb = Codebook::random(4, 2, 1.0, &mut rng);
        cb.record_usage(&[0, 1, 2, 0, 1, 2]);
        let donors = vec![vec![9.0, 9.0]];
        let restarted = cb.restart_dead_codes(0.1, &donors, &mut rng);
        assert_eq!(restarted, vec![3]);
        assert_eq!(cb.codeword(3), &[9.0, 9.0]);
        assert!(cb.restart_dead_codes(0.0, &donors, &mut rng).is_empty());
        cb.reset_usage();
        cb.record_usage(&[0, 1, 2, 3]);
        assert!(cb.restart_dead_codes(0.1, &donors, &mut rng).is_empty());
    }

    #[test]
    fn pseudo_probabilities_follow_distances() {
        let cb = book(&[&[0.0], &[3f64.ln()]]);
        let p = cb.pseudo_probabilities(&positions_to_tensor(&[vec![0.0]])).unwrap();
        assert!((p[0][0] - 0.75).abs() < 1e-12 && (p[0][1] - 0.25).abs() < 1e-12);
        let sym = book(&[&[1.0, 0.0], &[-1.0, 0.0], &[0.0, 1.0], &[0.0, -1.0]]);
        let u = sym.pseudo_probabilities(&positions_to_tensor(&[vec![0.0, 0.0]])).unwrap();
        assert!(u[0].iter().all(|&x| (x - 0.25).abs() < 1e-15));
    }
}
