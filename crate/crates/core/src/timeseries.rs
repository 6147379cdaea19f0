//! Daily time-series ingestion and alignment.
//!
//! Sources arrive as two-column CSV files (date, value), one series each.
//! [`align`] merges several single- or multi-series frames onto one calendar
//! so that downstream labeling and training never see missing values.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Input-variable category, used as ingestion metadata.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    EquityIndex,
    Bond,
    Currency,
    Futures,
    Volatility,
    Macro,
}

/// Date-aligned table of named daily series.
///
/// Every series vector has exactly one value per calendar date, and dates
/// are strictly increasing. Frames are immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesFrame {
    dates: Vec<NaiveDate>,
    series: BTreeMap<String, Vec<f64>>,
    categories: BTreeMap<String, Category>,
}

impl TimeSeriesFrame {
    /// Build a frame, validating the calendar and per-series lengths.
    pub fn new(
        dates: Vec<NaiveDate>,
        series: BTreeMap<String, Vec<f64>>,
        categories: BTreeMap<String, Category>,
    ) -> Result<Self> {
        for pair in dates.windows(2) {
            if pair[1] <= pair[0] {
                return Err(Error::Argument(format!(
                    "dates must be strictly increasing, got {} then {}",
                    pair[0], pair[1]
                )));
            }
        }
        for (name, values) in &series {
            if values.len() != dates.len() {
                return Err(Error::Dimension(format!(
                    "series `{name}` has {} values for {} dates",
                    values.len(),
                    dates.len()
                )));
            }
            if !categories.contains_key(name) {
                return Err(Error::Argument(format!(
                    "series `{name}` has no category tag"
                )));
            }
        }
        Ok(Self {
            dates,
            series,
            categories,
        })
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    /// Series names in deterministic (sorted) order.
    pub fn series_names(&self) -> Vec<&str> {
        self.series.keys().map(String::as_str).collect()
    }

    pub fn values(&self, name: &str) -> Option<&[f64]> {
        self.series.get(name).map(Vec::as_slice)
    }

    pub fn category(&self, name: &str) -> Option<Category> {
        self.categories.get(name).copied()
    }

    /// Feature matrix with one column per series, in sorted-name order.
    pub fn to_matrix(&self) -> (Vec<String>, Matrix) {
        let names: Vec<String> = self.series.keys().cloned().collect();
        let mut m = Matrix::zeros(self.dates.len(), names.len());
        for (c, name) in names.iter().enumerate() {
            m.set_col(c, &self.series[name]);
        }
        (names, m)
    }
}

/// How to merge calendars during [`align`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Join {
    Intersection,
    Union,
}

/// How to treat dates where a series has no observation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fill {
    ForwardFill,
    DropRow,
}

/// Calendar-merge policy for [`align`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignmentPolicy {
    pub join: Join,
    pub fill: Fill,
    /// Longest calendar-day gap forward fill may bridge; beyond it the row
    /// is dropped. Weekly macro series need about 5 days on a daily grid.
    pub max_fill_gap: u32,
}

impl Default for AlignmentPolicy {
    fn default() -> Self {
        Self {
            join: Join::Intersection,
            fill: Fill::ForwardFill,
            max_fill_gap: 5,
        }
    }
}

/// Parse a two-column (date, value) CSV into a single-series frame.
///
/// The header row is required, dates must be ISO-8601, and rows may arrive
/// unsorted; the output is sorted ascending. Duplicate dates are rejected.
pub fn ingest_csv<R: Read>(source: R, name: &str, category: Category) -> Result<TimeSeriesFrame> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(source);

    let mut rows: Vec<(NaiveDate, f64)> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            Error::Parse {
                line,
                message: e.to_string(),
            }
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != 2 {
            return Err(Error::Parse {
                line,
                message: format!("expected 2 columns, found {}", record.len()),
            });
        }
        let date = record[0].trim().parse::<NaiveDate>().map_err(|e| Error::Parse {
            line,
            message: format!("bad date `{}`: {e}", &record[0]),
        })?;
        let value = record[1].trim().parse::<f64>().map_err(|e| Error::Parse {
            line,
            message: format!("bad value `{}`: {e}", &record[1]),
        })?;
        rows.push((date, value));
    }

    rows.sort_by_key(|(d, _)| *d);
    for pair in rows.windows(2) {
        if pair[0].0 == pair[1].0 {
            return Err(Error::DuplicateDate(pair[0].0));
        }
    }

    let (dates, values): (Vec<_>, Vec<_>) = rows.into_iter().unzip();
    let mut series = BTreeMap::new();
    series.insert(name.to_string(), values);
    let mut categories = BTreeMap::new();
    categories.insert(name.to_string(), category);
    TimeSeriesFrame::new(dates, series, categories)
}

/// Merge frames onto one calendar according to `policy`.
///
/// Under forward fill, a missing observation is bridged from the most
/// recent one as long as the calendar-day gap does not exceed
/// `max_fill_gap`; otherwise the whole row is dropped.
pub fn align(frames: &[TimeSeriesFrame], policy: &AlignmentPolicy) -> Result<TimeSeriesFrame> {
    if frames.is_empty() {
        return Err(Error::Argument("align needs at least one frame".into()));
    }

    let mut seen: BTreeSet<&str> = BTreeSet::new();
    for frame in frames {
        for name in frame.series.keys() {
            if !seen.insert(name) {
                return Err(Error::Argument(format!(
                    "series `{name}` appears in more than one frame"
                )));
            }
        }
    }

    let calendar: Vec<NaiveDate> = match policy.join {
        Join::Union => {
            let mut dates: BTreeSet<NaiveDate> = BTreeSet::new();
            for frame in frames {
                dates.extend(frame.dates.iter().copied());
            }
            dates.into_iter().collect()
        }
        Join::Intersection => {
            let mut sets = frames.iter().map(|f| {
                f.dates.iter().copied().collect::<BTreeSet<NaiveDate>>()
            });
            let first = sets.next().unwrap_or_default();
            let common = sets.fold(first, |acc, s| acc.intersection(&s).copied().collect());
            common.into_iter().collect()
        }
    };

    if calendar.is_empty() && policy.join == Join::Intersection {
        return Err(Error::Data(
            "no overlapping dates under intersection join".into(),
        ));
    }

    // Per series: value at each calendar date, or a forward-filled value when
    // the gap allows it.
    struct SeriesLookup<'a> {
        values: Vec<Option<f64>>,
        name: &'a str,
        category: Category,
    }

    let mut lookups: Vec<SeriesLookup> = Vec::new();
    for frame in frames {
        let index: BTreeMap<NaiveDate, usize> = frame
            .dates
            .iter()
            .enumerate()
            .map(|(i, d)| (*d, i))
            .collect();
        for (name, values) in &frame.series {
            let mut column: Vec<Option<f64>> = Vec::with_capacity(calendar.len());
            for date in &calendar {
                match index.get(date) {
                    Some(&i) => column.push(Some(values[i])),
                    None => match policy.fill {
                        Fill::DropRow => column.push(None),
                        Fill::ForwardFill => {
                            // Most recent observation at or before `date`.
                            let prior = frame
                                .dates
                                .partition_point(|d| d <= date)
                                .checked_sub(1);
                            let filled = prior.and_then(|i| {
                                let gap = (*date - frame.dates[i]).num_days();
                                (gap >= 0 && gap <= i64::from(policy.max_fill_gap))
                                    .then(|| values[i])
                            });
                            column.push(filled);
                        }
                    },
                }
            }
            lookups.push(SeriesLookup {
                values: column,
                name,
                category: frame.categories[name],
            });
        }
    }

    let keep: Vec<usize> = (0..calendar.len())
        .filter(|&row| lookups.iter().all(|l| l.values[row].is_some()))
        .collect();

    let dates: Vec<NaiveDate> = keep.iter().map(|&r| calendar[r]).collect();
    let mut series = BTreeMap::new();
    let mut categories = BTreeMap::new();
    for lookup in &lookups {
        let values: Vec<f64> = keep.iter().map(|&r| lookup.values[r].unwrap()).collect();
        series.insert(lookup.name.to_string(), values);
        categories.insert(lookup.name.to_string(), lookup.category);
    }

    if dates.is_empty() && policy.join == Join::Intersection {
        return Err(Error::Data(
            "no overlapping dates under intersection join".into(),
        ));
    }

    TimeSeriesFrame::new(dates, series, categories)
}

/// Percentage change over `horizon` steps: `out[i] = v[i+h]/v[i] - 1`.
///
/// The output has `len - horizon` entries; entry `i` is the return realized
/// between positions `i` and `i + horizon`.
pub fn pct_change(values: &[f64], horizon: usize) -> Result<Vec<f64>> {
    if horizon == 0 {
        return Err(Error::Argument("pct_change horizon must be positive".into()));
    }
    if horizon >= values.len() {
        return Err(Error::Argument(format!(
            "pct_change horizon {} must be smaller than the series length {}",
            horizon,
            values.len()
        )));
    }
    let mut out = Vec::with_capacity(values.len() - horizon);
    for i in 0..values.len() - horizon {
        if values[i] == 0.0 {
            return Err(Error::Domain(format!(
                "zero denominator at position {i} in pct_change"
            )));
        }
        out.push(values[i + horizon] / values[i] - 1.0);
    }
    Ok(out)
}
