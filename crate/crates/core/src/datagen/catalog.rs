use serde::{Deserialize, Serialize};

use super::DataError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueType {
    Real,
    PositiveReal,
    Count,
    Binary,
}

impl ValueType {
    pub fn is_binary(self) -> bool {
        matches!(self, Self::Binary)
    }
}

/// How the generator draws a variable's daily value.
///
/// `location` and `spread` are on the natural scale for `real`, the log
/// scale for `positive_real`/`count` (a log-normal rate for counts) and the
/// logit scale for `binary`. Each regime shifts `location` by
/// `regime_shift * effect_size * u` with `u` in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Emission {
    pub location: f64,
    pub spread: f64,
    pub regime_shift: f64,
    /// Weekend indicator taken from the calendar instead of the regime.
    #[serde(default)]
    pub calendar: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariableSpec {
    /// Column name, snake_case.
    pub name: String,
    pub label: String,
    pub value_type: ValueType,
    pub min: Option<f64>,
    pub max: Option<f64>,
    /// Fraction of days with no recorded value before any preprocessing.
    pub missing_rate: f64,
    /// Whether MCAR/MNAR corruption may touch this variable.
    pub synthetic_missingness: bool,
    pub emission: Emission,
}

impl VariableSpec {
    pub fn in_bounds(&self, v: f64) -> bool {
        self.min.is_none_or(|lo| v >= lo) && self.max.is_none_or(|hi| v <= hi)
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if let (Some(lo), Some(hi)) = (self.min, self.max) {
            if !(lo < hi) {
                return Err(DataError::InvalidCatalog(format!("{}: min {lo} is not below max {hi}", self.name)));
            }
        }
        if self.value_type.is_binary() && (self.min.is_some() || self.max.is_some()) {
            return Err(DataError::InvalidCatalog(format!("{}: binary variables take no clip bounds", self.name)));
        }
        if !(0.0..1.0).contains(&self.missing_rate) {
            return Err(DataError::InvalidCatalog(format!("{}: missing rate must lie in [0, 1)", self.name)));
        }
        Ok(())
    }
}

/// Ordered variable list; column order everywhere follows this order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Catalog {
    pub variables: Vec<VariableSpec>,
}

impl Catalog {
    pub fn new(variables: Vec<VariableSpec>) -> Result<Self, DataError> {
        let catalog = Self { variables };
        catalog.validate()?;
        Ok(catalog)
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if self.variables.is_empty() {
            return Err(DataError::InvalidCatalog("catalog has no variables".into()));
        }
        for (i, v) in self.variables.iter().enumerate() {
            v.validate()?;
            if self.variables[..i].iter().any(|w| w.name == v.name) {
                return Err(DataError::InvalidCatalog(format!("duplicate variable {}", v.name)));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.variables.len()
    }

    pub fn is_empty(&self) -> bool {
        self.variables.is_empty()
    }

    pub fn names(&self) -> Vec<String> {
        self.variables.iter().map(|v| v.name.clone()).collect()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.variables.iter().position(|v| v.name == name)
    }

    pub fn binary_flags(&self) -> Vec<bool> {
        self.variables.iter().map(|v| v.value_type.is_binary()).collect()
    }

    /// The ten daily variables of the smartphone cohort.
    ///
    /// Bounds are the clipping table's; missing rates are the cohort's
    /// observed rates. Emission constants are synthetic.
    pub fn default_catalog() -> Self {
        let var = |name: &str,
                   label: &str,
                   value_type,
                   min,
                   max,
                   missing_pct: f64,
                   (location, spread, regime_shift): (f64, f64, f64)| VariableSpec {
            name: name.into(),
            label: label.into(),
            value_type,
            min,
            max,
            missing_rate: missing_pct / 100.0,
            synthetic_missingness: !matches!(value_type, ValueType::Binary),
            emission: Emission {
                location,
                spread,
                regime_shift,
                calendar: false,
            },
        };
        let ln = f64::ln;
        let mut variables = vec![
            var("sleep_start", "Sleep Start (s)", ValueType::Real, Some(-22_500.0), Some(25_000.0), 66.11, (3_600.0, 3_000.0, 4_000.0)),
            var("distance", "Distance (m)", ValueType::PositiveReal, Some(20.0), Some(95_000.0), 73.01, (ln(5_000.0), 0.5, 0.6)),
            var("time_at_home", "Time at Home (m)", ValueType::PositiveReal, Some(120.0), None, 82.53, (ln(900.0), 0.2, 0.25)),
            var("sleep_duration", "Sleep Duration (s)", ValueType::PositiveReal, Some(3_600.0), Some(54_000.0), 66.76, (ln(26_000.0), 0.15, 0.18)),
            var("time_walking", "Time Walking (s)", ValueType::PositiveReal, Some(120.0), Some(15_000.0), 62.79, (ln(2_400.0), 0.4, 0.5)),
            var("app_usage", "App Usage (s)", ValueType::PositiveReal, Some(180.0), Some(35_000.0), 83.15, (ln(9_000.0), 0.35, 0.4)),
            var("location_clusters", "Location Clusters", ValueType::Count, Some(1.0), Some(15.0), 72.53, (ln(4.0), 0.25, 0.35)),
            var("total_steps", "Total Steps", ValueType::Count, Some(150.0), Some(25_000.0), 55.30, (ln(6_000.0), 0.35, 0.45)),
            var("weekend", "Weekend", ValueType::Binary, None, None, 0.0, (0.0, 0.0, 0.0)),
            var("practiced_sport", "Practiced Sport", ValueType::Binary, None, None, 0.0, (-1.0, 0.0, 1.0)),
        ];
        variables[8].emission.calendar = true;
        Self { variables }
    }
}
