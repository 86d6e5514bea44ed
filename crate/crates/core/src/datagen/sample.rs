use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::DataError;

/// Trinary mask codes.
pub const MISSING: u8 = 0;
pub const OBSERVED: u8 = 1;
pub const SYNTHETIC: u8 = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Space {
    Original,
    Scaled,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Corruption {
    Mcar,
    Mnar,
}

/// One contiguous (or to-be-split) daily record of one patient.
///
/// `values[f][t]` and `mask[f][t]` index variable `f` on the day
/// `days[t]`, counted from the patient's first recorded day.
/// Originally missing entries (mask 0) hold NaN in original space and 0 in
/// scaled space. Synthetically hidden entries (mask 2) keep their true
/// value so imputation can be scored; the model never reads them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeSeriesSample {
    pub patient_id: String,
    pub segment: usize,
    pub start_date: NaiveDate,
    pub days: Vec<u32>,
    pub values: Vec<Vec<f64>>,
    pub mask: Vec<Vec<u8>>,
    pub space: Space,
    pub corruption: Option<Corruption>,
}

impl TimeSeriesSample {
    pub fn n_vars(&self) -> usize {
        self.values.len()
    }

    pub fn len(&self) -> usize {
        self.days.len()
    }

    pub fn is_empty(&self) -> bool {
        self.days.is_empty()
    }

    /// Identifier unique across segments of the same patient.
    pub fn key(&self) -> String {
        format!("{}-s{}", self.patient_id, self.segment)
    }

    pub fn sentinel(&self) -> f64 {
        match self.space {
            Space::Original => f64::NAN,
            Space::Scaled => 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let t = self.days.len();
        if self.mask.len() != self.values.len() {
            return Err(DataError::Shape(format!(
                "{}: {} value rows but {} mask rows",
                self.key(),
                self.values.len(),
                self.mask.len()
            )));
        }
        for (f, (v, m)) in self.values.iter().zip(&self.mask).enumerate() {
            if v.len() != t || m.len() != t {
                return Err(DataError::Shape(format!("{}: variable {f} does not span {t} days", self.key())));
            }
            if let Some(&bad) = m.iter().find(|&&c| c > SYNTHETIC) {
                return Err(DataError::Shape(format!("{}: mask code {bad} outside {{0,1,2}}", self.key())));
            }
            if let Some(i) = (0..t).find(|&i| m[i] != MISSING && !v[i].is_finite()) {
                return Err(DataError::Shape(format!(
                    "{}: variable {f} day {} is flagged present but not finite",
                    self.key(),
                    self.days[i]
                )));
            }
        }
        if self.days.windows(2).any(|w| w[1] <= w[0]) {
            return Err(DataError::Shape(format!("{}: day indices not increasing", self.key())));
        }
        Ok(())
    }

    /// Fraction of entries of variable `f` that are not observed.
    pub fn missing_fraction(&self, f: usize) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        self.mask[f].iter().filter(|&&c| c != OBSERVED).count() as f64 / self.len() as f64
    }

    pub fn binary_mask(&self) -> Vec<Vec<u8>> {
        self.mask.iter().map(|m| binarize_mask(m)).collect()
    }

    /// Copy of days `range` as a new segment.
    pub fn slice(&self, range: std::ops::Range<usize>, segment: usize) -> Self {
        Self {
            patient_id: self.patient_id.clone(),
            segment,
            start_date: self.start_date,
            days: self.days[range.clone()].to_vec(),
            values: self.values.iter().map(|v| v[range.clone()].to_vec()).collect(),
            mask: self.mask.iter().map(|m| m[range.clone()].to_vec()).collect(),
            space: self.space,
            corruption: self.corruption,
        }
    }
}

/// Collapses synthetic missingness into plain missingness: 1 stays 1, 0 and 2 become 0.
pub fn binarize_mask(mask: &[u8]) -> Vec<u8> {
    mask.iter().map(|&c| u8::from(c == OBSERVED)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binarize_collapses_twos() {
        assert_eq!(binarize_mask(&[0, 1, 2]), vec![0, 1, 0]);
        assert_eq!(binarize_mask(&[1, 1, 1]), vec![1, 1, 1]);
        assert_eq!(binarize_mask(&[2, 2]), vec![0, 0]);
    }
}
