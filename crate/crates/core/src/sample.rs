use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sorted scalar sample with implicit uniform weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalSample1D {
    values: Vec<f64>,
}

impl EmpiricalSample1D {
    /// Sorts `values` ascending. Fails on empty or non-finite input.
    pub fn new(mut values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyInput("empirical sample needs at least one value".into()));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite sample value {bad}")));
        }
        values.sort_by(f64::total_cmp);
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn min(&self) -> f64 {
        self.values[0]
    }

    pub fn max(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.len() as f64
    }

    /// Every value multiplied by `c`; order is reversed for negative `c`.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        Self::new(self.values.iter().map(|v| v * c).collect())
    }

    /// Every value shifted by `c`.
    pub fn shifted(&self, c: f64) -> Result<Self> {
        Self::new(self.values.iter().map(|v| v + c).collect())
    }

    /// Type-7 (linear interpolation) sample quantile, `q` in `[0, 1]`.
    pub fn quantile(&self, q: f64) -> f64 {
        crate::stats::quantile_sorted(&self.values, q)
    }
}
