//! Conversion of a run-length posterior into daily scores and alarms.
//!
//! Every method reduces to a per-day score compared against `threshold`.
//! `map_ratio` fires below, `map_diff` and `cumulative_sum` above, unless
//! `direction` overrides the comparison.

use serde::{Deserialize, Serialize};

use super::detector::RunLengthPosterior;
use super::CpdError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlarmMethod {
    MapRatio,
    MapDiff,
    CumulativeSum,
}

impl AlarmMethod {
    pub fn name(&self) -> &'static str {
        match self {
            Self::MapRatio => "map_ratio",
            Self::MapDiff => "map_diff",
            Self::CumulativeSum => "cumulative_sum",
        }
    }

    pub fn default_direction(&self) -> Direction {
        match self {
            Self::MapRatio => Direction::Below,
            Self::MapDiff | Self::CumulativeSum => Direction::Above,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Above,
    Below,
}

impl Direction {
    pub fn fires(&self, score: f64, threshold: f64) -> bool {
        match self {
            Self::Above => score > threshold,
            Self::Below => score < threshold,
        }
    }
}

/// Per-day term summed by `cumulative_sum`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CumulativeSource {
    /// The MAP run length `r̂_t`.
    MapRunLength,
    /// `p(r_t <= W)`, the posterior mass on runs no longer than the window.
    ShortRunMass,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AlarmConfig {
    pub method: AlarmMethod,
    pub threshold: f64,
    pub window: usize,
    pub source: CumulativeSource,
    pub direction: Option<Direction>,
}

impl Default for AlarmConfig {
    fn default() -> Self {
        Self {
            method: AlarmMethod::MapRatio,
            threshold: 0.5,
            window: 7,
            source: CumulativeSource::MapRunLength,
            direction: None,
        }
    }
}

impl AlarmConfig {
    pub fn direction(&self) -> Direction {
        self.direction.unwrap_or_else(|| self.method.default_direction())
    }

    pub fn validate(&self) -> Result<(), CpdError> {
        if self.window == 0 {
            return Err(CpdError::InvalidInput("alarm window must be >= 1".into()));
        }
        if !self.threshold.is_finite() {
            return Err(CpdError::InvalidInput("alarm threshold must be finite".into()));
        }
        Ok(())
    }
}

/// Scores for days `1..=T`; day `t` sits at index `t - 1`. `r̂_0 = 0`.
pub fn alarm_scores(posterior: &RunLengthPosterior, cfg: &AlarmConfig) -> Vec<f64> {
    let map: Vec<f64> = posterior.map.iter().map(|&r| r as f64).collect();
    let prev = |i: usize| if i == 0 { 0.0 } else { map[i - 1] };
    match cfg.method {
        AlarmMethod::MapRatio => (0..map.len()).map(|i| map[i] / prev(i).max(1.0)).collect(),
        AlarmMethod::MapDiff => (0..map.len()).map(|i| map[i] - prev(i)).collect(),
        AlarmMethod::CumulativeSum => {
            let s = match cfg.source {
                CumulativeSource::MapRunLength => map,
                CumulativeSource::ShortRunMass => posterior.short_run_mass(cfg.window),
            };
            (0..s.len())
                .map(|i| s[i.saturating_sub(cfg.window)..=i].iter().sum())
                .collect()
        }
    }
}

pub fn alarms(posterior: &RunLengthPosterior, cfg: &AlarmConfig) -> Vec<bool> {
    let dir = cfg.direction();
    alarm_scores(posterior, cfg)
        .into_iter()
        .map(|s| dir.fires(s, cfg.threshold))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn from_map(map: &[usize]) -> RunLengthPosterior {
        RunLengthPosterior::from_rows(map.iter().map(|&r| vec![(r, 1.0)]).collect(), 0.0)
    }

    #[test]
    fn ratio_catches_drop() {
        let p = from_map(&[1, 2, 3, 0]);
        let cfg = AlarmConfig::default();
        assert_eq!(alarms(&p, &cfg), vec![false, false, false, true]);
        assert_eq!(alarm_scores(&p, &cfg)[3], 0.0);
    }

    #[test]
    fn ramp_has_no_ratio_alarms() {
        let p = from_map(&(1..=30).collect::<Vec<_>>());
        assert!(alarms(&p, &AlarmConfig::default()).iter().all(|a| !a));
    }

    #[test]
    fn diff_fires_above() {
        let p = from_map(&[1, 2, 9, 1]);
        let cfg = AlarmConfig {
            method: AlarmMethod::MapDiff,
            threshold: 3.0,
            ..AlarmConfig::default()
        };
        assert_eq!(alarms(&p, &cfg), vec![false, false, true, false]);
    }

    #[test]
    fn cumulative_sum_spans_window_plus_one() {
        let p = from_map(&[1; 12]);
        let cfg = AlarmConfig {
            method: AlarmMethod::CumulativeSum,
            ..AlarmConfig::default()
        };
        let s = alarm_scores(&p, &cfg);
        assert_eq!(s[0], 1.0);
        assert_eq!(s[6], 7.0);
        assert_eq!(s[7], 8.0);
        assert_eq!(s[11], 8.0);
    }

    #[test]
    fn cumulative_instability_rises_after_a_change() {
        // ramp, change, ramp: accumulated run length dips while short-run mass peaks
        let map: Vec<usize> = (1..=20).chain(1..=20).collect();
        let rows = map
            .iter()
            .map(|&r| if r == 1 { vec![(1, 0.9), (25, 0.1)] } else { vec![(r, 1.0)] })
            .collect();
        let p = RunLengthPosterior::from_rows(rows, 0.0);
        let lit = AlarmConfig {
            method: AlarmMethod::CumulativeSum,
            ..AlarmConfig::default()
        };
        let s = alarm_scores(&p, &lit);
        assert!(s[21] < s[19]);
        let inst = AlarmConfig {
            source: CumulativeSource::ShortRunMass,
            ..lit
        };
        let u = alarm_scores(&p, &inst);
        assert!(u[24] > u[19]);
    }
}
