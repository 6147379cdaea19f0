//! Bounded risk-indicator series.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dated risk-indicator values in `[-1, +1]`.
///
/// Negative values call for a defensive stance; the closer to -1, the
/// higher the implied probability of a severe drawdown. Positive values
/// support risk-seeking positioning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskIndicatorSeries {
    dates: Vec<NaiveDate>,
    values: Vec<f64>,
}

impl RiskIndicatorSeries {
    pub fn new(dates: Vec<NaiveDate>, values: Vec<f64>) -> Result<Self> {
        if dates.len() != values.len() {
            return Err(Error::Dimension(format!(
                "{} dates vs {} values",
                dates.len(),
                values.len()
            )));
        }
        for pair in dates.windows(2) {
            if pair[1] <= pair[0] {
                return Err(Error::Argument(format!(
                    "indicator dates must be strictly increasing, got {} then {}",
                    pair[0], pair[1]
                )));
            }
        }
        for (i, &v) in values.iter().enumerate() {
            if !(-1.0..=1.0).contains(&v) {
                return Err(Error::Domain(format!(
                    "indicator value {v} at position {i} outside [-1, 1]"
                )));
            }
        }
        Ok(Self { dates, values })
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}
