//! Event matching and ROC sweeps.
//!
//! An event on day `e` is detected when an alarm fires in `(e - W, e]`.
//! Events are visited in day order and each takes the earliest alarm in its
//! window not yet credited to another event. Alarms outside every window are
//! false positives; alarm-free days outside every window are true negatives.

use serde::{Deserialize, Serialize};

use super::alarms::Direction;
use super::CpdError;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fn_: usize,
    pub fp: usize,
    pub tn: usize,
}

impl Confusion {
    pub fn sensitivity(&self) -> f64 {
        let p = self.tp + self.fn_;
        if p == 0 {
            0.0
        } else {
            self.tp as f64 / p as f64
        }
    }

    pub fn fpr(&self) -> f64 {
        let n = self.fp + self.tn;
        if n == 0 {
            0.0
        } else {
            self.fp as f64 / n as f64
        }
    }

    pub fn add(&mut self, o: &Confusion) {
        self.tp += o.tp;
        self.fn_ += o.fn_;
        self.fp += o.fp;
        self.tn += o.tn;
    }
}

pub fn evaluate_events(alarms: &[bool], events: &[usize], window: usize) -> Result<Confusion, CpdError> {
    let len = alarms.len();
    if let Some(&day) = events.iter().find(|&&e| e >= len) {
        return Err(CpdError::EventOutOfRange { day, len });
    }
    let mut sorted = events.to_vec();
    sorted.sort_unstable();
    let mut in_window = vec![false; len];
    let mut credited = vec![false; len];
    let mut c = Confusion::default();
    for &e in &sorted {
        let lo = (e + 1).saturating_sub(window);
        for d in lo..=e {
            in_window[d] = true;
        }
        match (lo..=e).find(|&d| alarms[d] && !credited[d]) {
            Some(d) => {
                credited[d] = true;
                c.tp += 1;
            }
            None => c.fn_ += 1,
        }
    }
    for d in 0..len {
        if !in_window[d] {
            if alarms[d] {
                c.fp += 1;
            } else {
                c.tn += 1;
            }
        }
    }
    Ok(c)
}

/// Per-day scores for one sequence with its event days.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredSeries {
    pub id: String,
    pub scores: Vec<f64>,
    pub events: Vec<usize>,
}

mod extended_f64 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        match *v {
            f64::INFINITY => s.serialize_str("inf"),
            f64::NEG_INFINITY => s.serialize_str("-inf"),
            x if x.is_nan() => s.serialize_str("nan"),
            x => s.serialize_f64(x),
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(x) => Ok(x),
            Repr::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    /// The sentinels serialize as the strings `"inf"` and `"-inf"`.
    #[serde(with = "extended_f64")]
    pub threshold: f64,
    pub fpr: f64,
    pub sensitivity: f64,
    pub confusion: Confusion,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

/// Area under `(fpr, sensitivity)` points after sorting.
pub fn trapezoid_auc(points: &mut [(f64, f64)]) -> f64 {
    points.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    points.windows(2).map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0).sum()
}

/// Confusion counts pooled over all series at each threshold. Without an
/// explicit grid every distinct score is used. Infinite sentinels are always
/// added so the curve reaches `(0, 0)` and `(1, 1)`.
pub fn roc_sweep(
    series: &[ScoredSeries],
    direction: Direction,
    thresholds: Option<&[f64]>,
    window: usize,
) -> Result<RocCurve, CpdError> {
    let mut grid: Vec<f64> = match thresholds {
        Some(t) => t.to_vec(),
        None => series.iter().flat_map(|s| s.scores.iter().copied()).collect(),
    };
    if grid.iter().any(|t| t.is_nan()) {
        return Err(CpdError::InvalidInput("NaN threshold".into()));
    }
    grid.push(f64::NEG_INFINITY);
    grid.push(f64::INFINITY);
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let mut points = Vec::with_capacity(grid.len());
    for &tau in &grid {
        let mut total = Confusion::default();
        for s in series {
            let alarms: Vec<bool> = s
                .scores
                .iter()
                .map(|&v| match (tau.is_infinite(), direction) {
                    (true, Direction::Above) => tau < 0.0,
                    (true, Direction::Below) => tau > 0.0,
                    _ => direction.fires(v, tau),
                })
                .collect();
            total.add(&evaluate_events(&alarms, &s.events, window)?);
        }
        points.push(RocPoint {
            threshold: tau,
            fpr: total.fpr(),
            sensitivity: total.sensitivity(),
            confusion: total,
        });
    }
    points.sort_by(|a, b| a.fpr.total_cmp(&b.fpr).then(a.sensitivity.total_cmp(&b.sensitivity)));
    let mut xy: Vec<(f64, f64)> = points.iter().map(|p| (p.fpr, p.sensitivity)).collect();
    let auc = trapezoid_auc(&mut xy);
    Ok(RocCurve { points, auc })
}
