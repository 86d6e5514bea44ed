//! Synthetic missingness: entries are hidden by setting their mask code to 2.
//! Stored values and mask-0 entries are never touched.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::catalog::Catalog;
use super::preprocess::{quantile_sorted, sorted_finite};
use super::sample::{Corruption, TimeSeriesSample, OBSERVED, SYNTHETIC};
use super::DataError;
use crate::numkernel::KernelRng;
use crate::seed::rng_for;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McarConfig {
    pub rate: f64,
    /// Features already missing above this fraction are left alone.
    pub ceiling: f64,
}

impl Default for McarConfig {
    fn default() -> Self {
        Self {
            rate: 0.10,
            ceiling: 0.85,
        }
    }
}

/// Flags observed values outside `[lower_quantile, upper_quantile]` of the
/// feature's own observed distribution with `probability`; a missing bound
/// leaves that side open.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MnarRule {
    pub variable: String,
    pub lower_quantile: Option<f64>,
    pub upper_quantile: Option<f64>,
    pub probability: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MnarConfig {
    /// `None` applies the default band rule to every eligible variable.
    pub rules: Option<Vec<MnarRule>>,
    pub enabled: bool,
    pub ceiling: f64,
    pub random_rate: f64,
}

impl Default for MnarConfig {
    fn default() -> Self {
        Self {
            rules: None,
            enabled: true,
            ceiling: 0.85,
            random_rate: 0.02,
        }
    }
}

impl MnarConfig {
    /// Outside the [5th, 95th] percentile band with probability 0.7.
    pub fn default_rules(catalog: &Catalog) -> Vec<MnarRule> {
        catalog
            .variables
            .iter()
            .filter(|v| v.synthetic_missingness)
            .map(|v| MnarRule {
                variable: v.name.clone(),
                lower_quantile: Some(0.05),
                upper_quantile: Some(0.95),
                probability: 0.7,
            })
            .collect()
    }

    pub fn resolved_rules(&self, catalog: &Catalog) -> Result<Vec<(usize, MnarRule)>, DataError> {
        if !self.enabled {
            return Ok(Vec::new());
        }
        let rules = self.rules.clone().unwrap_or_else(|| Self::default_rules(catalog));
        rules
            .into_iter()
            .map(|r| {
                let f = catalog
                    .index_of(&r.variable)
                    .ok_or_else(|| DataError::UnknownVariable(r.variable.clone()))?;
                if !catalog.variables[f].synthetic_missingness {
                    return Err(DataError::InvalidConfig(format!(
                        "{} is exempt from synthetic missingness",
                        r.variable
                    )));
                }
                Ok((f, r))
            })
            .collect()
    }
}

fn observed_positions(mask: &[u8]) -> Vec<usize> {
    (0..mask.len()).filter(|&t| mask[t] == OBSERVED).collect()
}

fn check(sample: &TimeSeriesSample, catalog: &Catalog) -> Result<(), DataError> {
    if sample.n_vars() != catalog.len() {
        return Err(DataError::CatalogMismatch(format!(
            "{} has {} variables, catalog has {}",
            sample.key(),
            sample.n_vars(),
            catalog.len()
        )));
    }
    sample.validate()
}

/// Hides each observed entry with probability `rate`, per feature, unless
/// the feature is already missing above the ceiling.
pub fn corrupt_mcar(
    sample: &TimeSeriesSample,
    catalog: &Catalog,
    cfg: &McarConfig,
    seed: u64,
) -> Result<TimeSeriesSample, DataError> {
    check(sample, catalog)?;
    let mut out = sample.clone();
    out.corruption = Some(Corruption::Mcar);
    for (f, spec) in catalog.variables.iter().enumerate() {
        if !spec.synthetic_missingness || out.missing_fraction(f) > cfg.ceiling {
            continue;
        }
        let mut rng = rng_for(seed, &format!("mcar/{}/{}", sample.key(), spec.name));
        for t in observed_positions(&out.mask[f]) {
            if rng.random::<f64>() < cfg.rate {
                out.mask[f][t] = SYNTHETIC;
            }
        }
    }
    Ok(out)
}

/// Value-dependent hiding followed by incidental random loss, with the
/// per-feature missingness ceiling enforced on the result.
pub fn corrupt_mnar(
    sample: &TimeSeriesSample,
    catalog: &Catalog,
    cfg: &MnarConfig,
    seed: u64,
) -> Result<TimeSeriesSample, DataError> {
    check(sample, catalog)?;
    let rules = cfg.resolved_rules(catalog)?;
    let mut out = sample.clone();
    out.corruption = Some(Corruption::Mnar);
    let len = out.len();
    let cap = (cfg.ceiling * len as f64).floor() as usize;
    for (f, spec) in catalog.variables.iter().enumerate() {
        if !spec.synthetic_missingness || out.missing_fraction(f) > cfg.ceiling {
            continue;
        }
        let mut rng = rng_for(seed, &format!("mnar/{}/{}", sample.key(), spec.name));
        let observed = observed_positions(&out.mask[f]);
        let mut chosen = Vec::new();
        let sorted = sorted_finite(observed.iter().map(|&t| out.values[f][t]));
        for (_, rule) in rules.iter().filter(|(g, _)| *g == f) {
            if sorted.is_empty() {
                break;
            }
            let lo = rule.lower_quantile.map(|q| quantile_sorted(&sorted, q));
            let hi = rule.upper_quantile.map(|q| quantile_sorted(&sorted, q));
            for &t in &observed {
                let v = out.values[f][t];
                let extreme = lo.is_some_and(|l| v < l) || hi.is_some_and(|h| v > h);
                if extreme && !chosen.contains(&t) && rng.random::<f64>() < rule.probability {
                    chosen.push(t);
                }
            }
        }
        for &t in &observed {
            if !chosen.contains(&t) && rng.random::<f64>() < cfg.random_rate {
                chosen.push(t);
            }
        }
        let already = len - observed.len();
        truncate_to_ceiling(&mut chosen, cap.saturating_sub(already), &mut rng);
        for t in chosen {
            out.mask[f][t] = SYNTHETIC;
        }
    }
    Ok(out)
}

fn truncate_to_ceiling(chosen: &mut Vec<usize>, budget: usize, rng: &mut KernelRng) {
    if chosen.len() > budget {
        chosen.shuffle(rng);
        chosen.truncate(budget);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::sample::{Space, MISSING};
    use chrono::NaiveDate;

    fn single(name: &str, values: Vec<f64>, mask: Vec<u8>) -> (TimeSeriesSample, Catalog) {
        let mut cat = Catalog::default_catalog();
        let i = cat.index_of(name).unwrap();
        cat.variables = vec![cat.variables[i].clone()];
        let vals = values
            .iter()
            .zip(&mask)
            .map(|(&v, &m)| if m == MISSING { f64::NAN } else { v })
            .collect();
        let s = TimeSeriesSample {
            patient_id: "p000".into(),
            segment: 0,
            start_date: NaiveDate::from_ymd_opt(2020, 1, 1).unwrap(),
            days: (0..values.len() as u32).collect(),
            values: vec![vals],
            mask: vec![mask],
            space: Space::Original,
            corruption: None,
        };
        (s, cat)
    }

    #[test]
    fn mcar_skips_mostly_missing_feature() {
        let mask: Vec<u8> = (0..100).map(|t| u8::from(t % 10 == 0)).collect();
        let (s, cat) = single("distance", vec![100.0; 100], mask);
        let out = corrupt_mcar(&s, &cat, &McarConfig::default(), 1).unwrap();
        assert_eq!(out.mask, s.mask);
    }

    #[test]
    fn mcar_rate_on_full_feature() {
        let (s, cat) = single("distance", vec![100.0; 1000], vec![OBSERVED; 1000]);
        let out = corrupt_mcar(&s, &cat, &McarConfig::default(), 2).unwrap();
        let n = out.mask[0].iter().filter(|&&c| c == SYNTHETIC).count();
        // 4 binomial standard deviations around 100
        assert!((62..=138).contains(&n), "{n}");
        assert_eq!(out.values[0], s.values[0]);
        let again = corrupt_mcar(&s, &cat, &McarConfig::default(), 2).unwrap();
        assert_eq!(again.mask, out.mask);
    }

    #[test]
    fn mnar_upper_rule_hits_only_the_tail() {
        let values: Vec<f64> = (0..200).map(|i| if i % 20 == 0 { 90_000.0 } else { 100.0 + i as f64 }).collect();
        let (s, cat) = single("distance", values.clone(), vec![OBSERVED; 200]);
        let cfg = MnarConfig {
            rules: Some(vec![MnarRule {
                variable: "distance".into(),
                lower_quantile: None,
                upper_quantile: Some(0.95),
                probability: 1.0,
            }]),
            random_rate: 0.0,
            ..MnarConfig::default()
        };
        let out = corrupt_mnar(&s, &cat, &cfg, 3).unwrap();
        let hidden: Vec<usize> = (0..200).filter(|&t| out.mask[0][t] == SYNTHETIC).collect();
        assert!(!hidden.is_empty());
        assert!(hidden.iter().all(|&t| values[t] == 90_000.0));
    }

    #[test]
    fn mnar_truncates_at_ceiling() {
        // 84% missing; the rule would hide every observed entry
        let mask: Vec<u8> = (0..100).map(|t| u8::from(t >= 84)).collect();
        let (s, cat) = single("distance", (0..100).map(f64::from).collect(), mask);
        let cfg = MnarConfig {
            rules: Some(vec![MnarRule {
                variable: "distance".into(),
                lower_quantile: Some(1.0),
                upper_quantile: None,
                probability: 1.0,
            }]),
            ..MnarConfig::default()
        };
        let out = corrupt_mnar(&s, &cat, &cfg, 4).unwrap();
        assert!((out.missing_fraction(0) - 0.85).abs() < 1e-12);
    }

    #[test]
    fn disabled_rules_leave_random_loss() {
        let (s, cat) = single("distance", (0..5000).map(f64::from).collect(), vec![OBSERVED; 5000]);
        let cfg = MnarConfig {
            enabled: false,
            ..MnarConfig::default()
        };
        let out = corrupt_mnar(&s, &cat, &cfg, 5).unwrap();
        let frac = out.mask[0].iter().filter(|&&c| c == SYNTHETIC).count() as f64 / 5000.0;
        assert!((frac - 0.02).abs() < 0.008, "{frac}");
    }

    #[test]
    fn unknown_variable_is_an_error() {
        let (s, cat) = single("distance", vec![1.0], vec![OBSERVED]);
        let cfg = MnarConfig {
            rules: Some(vec![MnarRule {
                variable: "heart_rate".into(),
                lower_quantile: None,
                upper_quantile: Some(0.9),
                probability: 1.0,
            }]),
            ..MnarConfig::default()
        };
        assert!(matches!(corrupt_mnar(&s, &cat, &cfg, 1), Err(DataError::UnknownVariable(_))));
    }
}
