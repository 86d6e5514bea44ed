//! Exhaustive segmentation enumeration for short sequences.
//!
//! A change indicator `c_s` at step `s` closes the current run after it has
//! absorbed `z_s`; the next run starts at `z_{s+1}`. The joint of the
//! indicators and data is the hazard-geometric prior times the closed-form
//! marginal of every segment.

use super::detector::{Hazard, ModelSpec, RunLengthPosterior, Sequence};
use super::models::{logsumexp, MultivariateNormal, ObservationModel};
use super::CpdError;

pub const ORACLE_MAX_T: usize = 12;

fn oracle_with<M: ObservationModel>(model: &M, data: &[M::Obs], hazard: Hazard) -> Result<RunLengthPosterior, CpdError> {
    if data.is_empty() {
        return Err(CpdError::EmptySequence);
    }
    if data.len() > ORACLE_MAX_T {
        return Err(CpdError::TooLong {
            max: ORACLE_MAX_T,
            got: data.len(),
        });
    }
    for z in data {
        model.check(z)?;
    }
    let mut rows = Vec::with_capacity(data.len());
    let mut ln_ev = 0.0;
    for t in 1..=data.len() {
        let mut by_r = vec![Vec::new(); t + 1];
        for mask in 0u32..(1 << t) {
            let changed = |s: usize| mask & (1 << (s - 1)) != 0;
            let mut ln_joint = 0.0;
            let mut start = 1;
            for s in 1..=t {
                if changed(s) {
                    ln_joint += hazard.ln_change();
                    let seg: Vec<&M::Obs> = data[start - 1..s].iter().collect();
                    ln_joint += model.log_marginal(&seg);
                    start = s + 1;
                } else {
                    ln_joint += hazard.ln_growth();
                }
            }
            if start <= t {
                let seg: Vec<&M::Obs> = data[start - 1..t].iter().collect();
                ln_joint += model.log_marginal(&seg);
            }
            let r = if changed(t) { 0 } else { t - (start - 1) };
            by_r[r].push(ln_joint);
        }
        let ln_r: Vec<f64> = by_r.into_iter().map(logsumexp).collect();
        let z = logsumexp(ln_r.iter().copied());
        rows.push(ln_r.iter().enumerate().map(|(r, l)| (r, (l - z).exp())).collect());
        if t == data.len() {
            ln_ev = z;
        }
    }
    Ok(RunLengthPosterior::from_rows(rows, ln_ev))
}

pub fn brute_force_oracle(seq: &Sequence, spec: &ModelSpec, hazard: Hazard) -> Result<RunLengthPosterior, CpdError> {
    match (spec, seq) {
        (ModelSpec::Hierarchical(m), Sequence::Ids(d)) => oracle_with(m, d, hazard),
        (ModelSpec::Multinomial(m), Sequence::Counts(d)) => oracle_with(m, d, hazard),
        (ModelSpec::Multivariate { prior }, Sequence::Vectors(d)) => {
            oracle_with(&MultivariateNormal::new(prior.clone()), d, hazard)
        }
        _ => Err(CpdError::VariantMismatch(spec.name())),
    }
}
