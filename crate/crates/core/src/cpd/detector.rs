//! Run-length recursion in log space.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use serde::{Deserialize, Serialize};

use super::models::{logsumexp, Categorical, MultivariateNormal, Multinomial, ObservationModel};
use super::CpdError;
use crate::numkernel::KernelRng;
use crate::seed::rng_for;

pub const PRUNE_THRESHOLD: f64 = 1e-12;

/// Constant hazard `1 / lambda`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hazard {
    pub lambda: f64,
}

impl Hazard {
    pub fn new(lambda: f64) -> Result<Self, CpdError> {
        if !(lambda.is_finite() && lambda > 1.0) {
            return Err(CpdError::InvalidHazard(lambda));
        }
        Ok(Self { lambda })
    }

    pub fn value(&self) -> f64 {
        1.0 / self.lambda
    }

    pub fn ln_change(&self) -> f64 {
        -self.lambda.ln()
    }

    pub fn ln_growth(&self) -> f64 {
        (-self.value()).ln_1p()
    }
}

#[derive(Clone, Debug)]
struct Hypothesis<S> {
    run_length: usize,
    ln_mass: f64,
    stats: S,
}

/// One online detector over a single sequence.
#[derive(Clone, Debug)]
pub struct Detector<M: ObservationModel> {
    model: M,
    hazard: Hazard,
    prune: Option<f64>,
    hyps: Vec<Hypothesis<M::Stats>>,
    t: usize,
}

impl<M: ObservationModel> Detector<M> {
    /// Starts from `p(r_0 = 0) = 1`.
    pub fn new(model: M, hazard: Hazard, prune: Option<f64>) -> Self {
        let stats = model.prior();
        Self {
            model,
            hazard,
            prune,
            hyps: vec![Hypothesis {
                run_length: 0,
                ln_mass: 0.0,
                stats,
            }],
            t: 0,
        }
    }

    pub fn time(&self) -> usize {
        self.t
    }

    /// Surviving hypotheses as `(run_length, probability)`, ascending.
    pub fn row(&self) -> Vec<(usize, f64)> {
        self.hyps.iter().map(|h| (h.run_length, h.ln_mass.exp())).collect()
    }

    /// Advances by one observation and returns the new row and the log evidence
    /// `ln p(z_t | z_{1:t-1})`.
    pub fn step(&mut self, obs: &M::Obs) -> Result<(Vec<(usize, f64)>, f64), CpdError> {
        self.model.check(obs)?;
        let step = self.t + 1;
        let mut joint = Vec::with_capacity(self.hyps.len());
        for h in &self.hyps {
            let lp = self.model.log_predictive(&h.stats, obs);
            if !lp.is_finite() {
                return Err(CpdError::NonFinitePredictive {
                    step,
                    run_length: h.run_length,
                });
            }
            joint.push(h.ln_mass + lp);
        }
        let ln_evidence = logsumexp(joint.iter().copied());
        let mut next = Vec::with_capacity(self.hyps.len() + 1);
        next.push(Hypothesis {
            run_length: 0,
            ln_mass: self.hazard.ln_change(),
            stats: self.model.prior(),
        });
        let g = self.hazard.ln_growth();
        for (h, j) in self.hyps.iter().zip(&joint) {
            next.push(Hypothesis {
                run_length: h.run_length + 1,
                ln_mass: g + j - ln_evidence,
                stats: self.model.update(&h.stats, obs),
            });
        }
        if let Some(eps) = self.prune {
            let ln_eps = eps.ln();
            next.retain(|h| h.ln_mass >= ln_eps);
            let z = logsumexp(next.iter().map(|h| h.ln_mass));
            for h in &mut next {
                h.ln_mass -= z;
            }
        }
        self.hyps = next;
        self.t = step;
        Ok((self.row(), ln_evidence))
    }
}

/// Sparse rows `t = 1..=T`, each listing `(r, p(r_t = r | z_{1:t}))`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunLengthPosterior {
    pub rows: Vec<Vec<(usize, f64)>>,
    pub map: Vec<usize>,
    pub ln_evidence: f64,
}

impl RunLengthPosterior {
    pub fn from_rows(rows: Vec<Vec<(usize, f64)>>, ln_evidence: f64) -> Self {
        let map = rows
            .iter()
            .map(|row| {
                row.iter()
                    .fold((0usize, f64::NEG_INFINITY), |best, &(r, p)| if p > best.1 { (r, p) } else { best })
                    .0
            })
            .collect();
        Self { rows, map, ln_evidence }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Row `t` (1-based) over `0..=T`.
    pub fn dense_row(&self, t: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.len() + 1];
        for &(r, p) in &self.rows[t - 1] {
            out[r] = p;
        }
        out
    }

    /// Row-major `T x (T+1)`.
    pub fn to_dense(&self) -> Vec<f64> {
        (1..=self.len()).flat_map(|t| self.dense_row(t)).collect()
    }

    /// `p(r_t <= horizon)` for each row.
    pub fn short_run_mass(&self, horizon: usize) -> Vec<f64> {
        self.rows
            .iter()
            .map(|row| row.iter().filter(|(r, _)| *r <= horizon).map(|(_, p)| p).sum())
            .collect()
    }
}

pub fn run_with<M: ObservationModel>(
    model: M,
    data: &[M::Obs],
    hazard: Hazard,
    prune: Option<f64>,
) -> Result<RunLengthPosterior, CpdError> {
    if data.is_empty() {
        return Err(CpdError::EmptySequence);
    }
    let mut det = Detector::new(model, hazard, prune);
    let mut rows = Vec::with_capacity(data.len());
    let mut ln_ev = 0.0;
    for z in data {
        let (row, e) = det.step(z)?;
        rows.push(row);
        ln_ev += e;
    }
    Ok(RunLengthPosterior::from_rows(rows, ln_ev))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum ModelSpec {
    Hierarchical(Categorical),
    Multinomial(Multinomial),
    Multivariate { prior: super::models::NiwPrior },
}

impl ModelSpec {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Hierarchical(_) => "hierarchical",
            Self::Multinomial(_) => "multinomial",
            Self::Multivariate { .. } => "multivariate",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Sequence {
    Ids(Vec<usize>),
    Counts(Vec<Vec<u32>>),
    Vectors(Vec<Vec<f64>>),
}

impl Sequence {
    pub fn len(&self) -> usize {
        match self {
            Self::Ids(v) => v.len(),
            Self::Counts(v) => v.len(),
            Self::Vectors(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn run(seq: &Sequence, spec: &ModelSpec, hazard: Hazard, prune: Option<f64>) -> Result<RunLengthPosterior, CpdError> {
    match (spec, seq) {
        (ModelSpec::Hierarchical(m), Sequence::Ids(d)) => run_with(m.clone(), d, hazard, prune),
        (ModelSpec::Multinomial(m), Sequence::Counts(d)) => run_with(m.clone(), d, hazard, prune),
        (ModelSpec::Multivariate { prior }, Sequence::Vectors(d)) => {
            run_with(MultivariateNormal::new(prior.clone()), d, hazard, prune)
        }
        _ => Err(CpdError::VariantMismatch(spec.name())),
    }
}

/// One multinomial draw of `s` profiles from a probability vector.
pub fn sample_profiles(probs: &[f64], s: u32, rng: &mut KernelRng) -> Result<Vec<u32>, CpdError> {
    let dist = WeightedIndex::new(probs).map_err(|e| CpdError::InvalidInput(format!("profile probabilities: {e}")))?;
    let mut counts = vec![0u32; probs.len()];
    for _ in 0..s {
        counts[dist.sample(rng)] += 1;
    }
    Ok(counts)
}

/// Draws every day from one seeded stream.
pub fn sample_profile_sequence(probs: &[Vec<f64>], s: u32, seed: u64) -> Result<Vec<Vec<u32>>, CpdError> {
    let mut rng = rng_for(seed, "cpd/sample_profiles");
    probs.iter().map(|p| sample_profiles(p, s, &mut rng)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cpd::models::NiwPrior;

    fn cat(k: usize) -> Categorical {
        Categorical::new(k, 1.0)
    }

    #[test]
    fn first_row_is_split_by_hazard() {
        let p = run_with(cat(20), &[3], Hazard::new(10.0).unwrap(), None).unwrap();
        assert_eq!(p.rows[0].len(), 2);
        assert!((p.rows[0][0].1 - 0.1).abs() < 1e-15);
        assert!((p.rows[0][1].1 - 0.9).abs() < 1e-15);
    }

    #[test]
    fn rows_sum_to_one_with_bounded_support() {
        let data: Vec<usize> = (0..60).map(|i| (i * 7 + i / 20) % 5).collect();
        let p = run_with(cat(5), &data, Hazard::new(10.0).unwrap(), Some(PRUNE_THRESHOLD)).unwrap();
        for (i, row) in p.rows.iter().enumerate() {
            let s: f64 = row.iter().map(|x| x.1).sum();
            assert!((s - 1.0).abs() < 1e-9);
            assert!(row.iter().all(|&(r, _)| r <= i + 1));
        }
    }

    #[test]
    fn huge_lambda_gives_ramp() {
        let data: Vec<usize> = (0..40).map(|i| i % 3).collect();
        let p = run_with(cat(3), &data, Hazard::new(1e12).unwrap(), Some(PRUNE_THRESHOLD)).unwrap();
        assert_eq!(p.map, (1..=40).collect::<Vec<_>>());
    }

    #[test]
    fn planted_switch_collapses_run_length() {
        let data: Vec<usize> = (0..100).map(|t| if t < 50 { t % 2 } else { 2 + t % 2 }).collect();
        let p = run_with(cat(4), &data, Hazard::new(100.0).unwrap(), Some(PRUNE_THRESHOLD)).unwrap();
        let after = &p.map[50..53];
        assert!(after.iter().any(|&r| r <= 3), "{after:?}");
        assert!(p.map[48] > 40);
    }

    #[test]
    fn no_underflow_at_long_horizon() {
        let data: Vec<usize> = (0..10_000).map(|t| (t * 31 + t / 997) % 4).collect();
        let p = run_with(cat(4), &data, Hazard::new(1e7).unwrap(), Some(PRUNE_THRESHOLD)).unwrap();
        assert!(p.ln_evidence.is_finite());
        let last: f64 = p.rows.last().unwrap().iter().map(|x| x.1).sum();
        assert!((last - 1.0).abs() < 1e-9);
    }

    #[test]
    fn variant_mismatch_and_empty_are_errors() {
        let h = Hazard::new(10.0).unwrap();
        let spec = ModelSpec::Hierarchical(cat(2));
        assert!(matches!(run(&Sequence::Vectors(vec![vec![1.0]]), &spec, h, None), Err(CpdError::VariantMismatch(_))));
        assert!(matches!(run(&Sequence::Ids(vec![]), &spec, h, None), Err(CpdError::EmptySequence)));
        assert!(matches!(run(&Sequence::Ids(vec![5]), &spec, h, None), Err(CpdError::OutOfAlphabet { .. })));
        let mv = ModelSpec::Multivariate { prior: NiwPrior::isotropic(vec![0.0, 0.0]) };
        assert!(matches!(run(&Sequence::Vectors(vec![vec![1.0]]), &mv, h, None), Err(CpdError::DimensionMismatch { .. })));
        assert!(Hazard::new(1.0).is_err());
    }

    #[test]
    fn sampling_is_seeded_and_concentrates() {
        let mut rng = rng_for(1, "t");
        assert_eq!(sample_profiles(&[0.0, 1.0, 0.0], 5, &mut rng).unwrap(), vec![0, 5, 0]);
        let uniform = vec![vec![0.25; 4]];
        let a = sample_profile_sequence(&uniform, 10_000, 3).unwrap();
        assert_eq!(a, sample_profile_sequence(&uniform, 10_000, 3).unwrap());
        assert!(a[0].iter().all(|&c| (2300..=2700).contains(&c)), "{:?}", a[0]);
    }
}
