//! Time-series panel of price series: calendar, ingestion, transforms,
//! standardization and a synthetic generator.

mod calendar;
mod ingest;
mod simulate;

pub use calendar::YearMonth;
pub use ingest::{ingest_csv, read_inflation_series, CsvLayout};
pub use simulate::{simulate_panel, DgpSpec, GroundTruth, RegimeSpec};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// What the values of a panel represent.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Transform {
    RawIndex,
    YoY,
    MoM,
    Standardized,
}

/// Per-series moments captured at standardization time.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesStats {
    pub mean: f64,
    pub sd: f64,
}

/// `T` monthly observations on `N` series, stored as a `T x N` matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct PricePanel {
    dates: Vec<YearMonth>,
    series_ids: Vec<String>,
    values: DMatrix<f64>,
    transform: Transform,
    standardization_stats: Option<Vec<SeriesStats>>,
}

impl PricePanel {
    /// Builds a panel, checking the calendar and shape invariants.
    pub fn new(
        dates: Vec<YearMonth>,
        series_ids: Vec<String>,
        values: DMatrix<f64>,
        transform: Transform,
    ) -> Result<Self> {
        if values.nrows() != dates.len() || values.ncols() != series_ids.len() {
            return Err(Error::arg(format!(
                "panel shape {}x{} does not match {} dates and {} series",
                values.nrows(),
                values.ncols(),
                dates.len(),
                series_ids.len()
            )));
        }
        check_monthly(&dates)?;
        if let Some((r, c)) = first_non_finite(&values) {
            return Err(Error::input(format!(
                "non-finite value for series {} at {}",
                series_ids[c], dates[r]
            )));
        }
        Ok(Self {
            dates,
            series_ids,
            values,
            transform,
            standardization_stats: None,
        })
    }

    pub fn dates(&self) -> &[YearMonth] {
        &self.dates
    }

    pub fn series_ids(&self) -> &[String] {
        &self.series_ids
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn transform(&self) -> Transform {
        self.transform
    }

    pub fn standardization_stats(&self) -> Option<&[SeriesStats]> {
        self.standardization_stats.as_deref()
    }

    pub fn n_series(&self) -> usize {
        self.series_ids.len()
    }

    pub fn n_periods(&self) -> usize {
        self.dates.len()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.values.column(j).iter().copied().collect()
    }

    /// Wide CSV `date,<series...>`, the layout [`ingest_csv`] reads back.
    pub fn to_csv(&self) -> String {
        let mut out = format!("date,{}\n", self.series_ids.join(","));
        for (t, row) in self.values.row_iter().enumerate() {
            out.push_str(&self.dates[t].to_string());
            for v in row.iter() {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }

    /// Row index of `date`, if it is in the panel.
    pub fn index_of(&self, date: YearMonth) -> Option<usize> {
        let first = *self.dates.first()?;
        let k = date.months_since(first);
        (k >= 0 && (k as usize) < self.dates.len()).then_some(k as usize)
    }

    /// Rows `start..end` as a new panel (standardization stats dropped).
    pub fn slice_rows(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.n_periods() {
            return Err(Error::arg(format!(
                "row range {start}..{end} invalid for panel with {} periods",
                self.n_periods()
            )));
        }
        Ok(Self {
            dates: self.dates[start..end].to_vec(),
            series_ids: self.series_ids.clone(),
            values: self.values.rows(start, end - start).into_owned(),
            transform: self.transform,
            standardization_stats: None,
        })
    }

    /// All observations dated on or before `last`.
    pub fn truncate_to(&self, last: YearMonth) -> Result<Self> {
        let end = self
            .index_of(last)
            .ok_or_else(|| Error::arg(format!("{last} is outside the panel calendar")))?;
        self.slice_rows(0, end + 1)
    }
}

fn first_non_finite(m: &DMatrix<f64>) -> Option<(usize, usize)> {
    for c in 0..m.ncols() {
        for r in 0..m.nrows() {
            if !m[(r, c)].is_finite() {
                return Some((r, c));
            }
        }
    }
    None
}

pub(crate) fn check_monthly(dates: &[YearMonth]) -> Result<()> {
    if dates.is_empty() {
        return Err(Error::input("empty calendar"));
    }
    for w in dates.windows(2) {
        if w[1].months_since(w[0]) != 1 {
            return Err(Error::input(format!(
                "calendar is not contiguous monthly: {} followed by {}",
                w[0], w[1]
            )));
        }
    }
    Ok(())
}

/// Percent change over `lag` months: `100 * (x_t / x_{t-lag} - 1)`.
fn percent_change(panel: &PricePanel, lag: usize, out: Transform) -> Result<PricePanel> {
    if panel.transform != Transform::RawIndex {
        return Err(Error::arg(format!(
            "percent change needs a raw index panel, got {:?}",
            panel.transform
        )));
    }
    let t = panel.n_periods();
    if t < lag + 1 {
        return Err(Error::arg(format!(
            "need at least {} periods for a {lag}-month change, got {t}",
            lag + 1
        )));
    }
    for c in 0..panel.n_series() {
        for r in 0..t {
            if panel.values[(r, c)] <= 0.0 {
                return Err(Error::input(format!(
                    "non-positive index value {} for series {} at {}",
                    panel.values[(r, c)],
                    panel.series_ids[c],
                    panel.dates[r]
                )));
            }
        }
    }
    let values = DMatrix::from_fn(t - lag, panel.n_series(), |r, c| {
        100.0 * (panel.values[(r + lag, c)] / panel.values[(r, c)] - 1.0)
    });
    Ok(PricePanel {
        dates: panel.dates[lag..].to_vec(),
        series_ids: panel.series_ids.clone(),
        values,
        transform: out,
        standardization_stats: None,
    })
}

/// Year-over-year percent change; drops the first 12 months.
pub fn to_yoy(panel: &PricePanel) -> Result<PricePanel> {
    percent_change(panel, 12, Transform::YoY)
}

/// Month-over-month percent change; drops the first month.
pub fn to_mom(panel: &PricePanel) -> Result<PricePanel> {
    percent_change(panel, 1, Transform::MoM)
}

/// Standardizes each column with the mean and sample standard deviation
/// computed over `window` (inclusive date range, default: whole panel).
pub fn standardize(panel: &PricePanel, window: Option<(YearMonth, YearMonth)>) -> Result<PricePanel> {
    if panel.transform == Transform::RawIndex {
        return Err(Error::arg("standardize expects an inflation-rate panel, got RawIndex"));
    }
    let (start, end) = match window {
        None => (0, panel.n_periods()),
        Some((a, b)) => {
            let s = panel
                .index_of(a)
                .ok_or_else(|| Error::arg(format!("window start {a} outside panel")))?;
            let e = panel
                .index_of(b)
                .ok_or_else(|| Error::arg(format!("window end {b} outside panel")))?;
            if e < s + 1 {
                return Err(Error::arg("standardization window needs at least two periods"));
            }
            (s, e + 1)
        }
    };
    if end - start < 2 {
        return Err(Error::arg("standardization window needs at least two periods"));
    }
    let mut stats = Vec::with_capacity(panel.n_series());
    for c in 0..panel.n_series() {
        let col: Vec<f64> = (start..end).map(|r| panel.values[(r, c)]).collect();
        let mean = crate::linalg::mean(&col);
        let sd = crate::linalg::sample_var(&col).sqrt();
        if !(sd > 1e-12 * (1.0 + mean.abs())) {
            return Err(Error::input(format!(
                "series {} has zero variance over the standardization window",
                panel.series_ids[c]
            )));
        }
        stats.push(SeriesStats { mean, sd });
    }
    let values = DMatrix::from_fn(panel.n_periods(), panel.n_series(), |r, c| {
        (panel.values[(r, c)] - stats[c].mean) / stats[c].sd
    });
    Ok(PricePanel {
        dates: panel.dates.clone(),
        series_ids: panel.series_ids.clone(),
        values,
        transform: Transform::Standardized,
        standardization_stats: Some(stats),
    })
}

/// Which aggregate a single inflation series represents.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SeriesKind {
    Headline,
    Indicator,
}

/// A single dated inflation-rate series in percent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InflationSeries {
    pub dates: Vec<YearMonth>,
    pub values: Vec<f64>,
    pub kind: SeriesKind,
}

impl InflationSeries {
    pub fn new(dates: Vec<YearMonth>, values: Vec<f64>, kind: SeriesKind) -> Result<Self> {
        if dates.len() != values.len() {
            return Err(Error::arg("series dates and values differ in length"));
        }
        check_monthly(&dates)?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::input("inflation series contains non-finite values"));
        }
        Ok(Self { dates, values, kind })
    }

    /// Takes column `j` of a rate panel as a headline series.
    pub fn from_panel_column(panel: &PricePanel, j: usize) -> Result<Self> {
        if j >= panel.n_series() {
            return Err(Error::arg(format!("column {j} out of range")));
        }
        Self::new(panel.dates.clone(), panel.column(j), SeriesKind::Headline)
    }

    pub fn index_of(&self, date: YearMonth) -> Option<usize> {
        let first = *self.dates.first()?;
        let k = date.months_since(first);
        (k >= 0 && (k as usize) < self.dates.len()).then_some(k as usize)
    }

    pub fn value_at(&self, date: YearMonth) -> Option<f64> {
        self.index_of(date).map(|i| self.values[i])
    }

    /// The values aligned to the given calendar, if it is fully covered.
    pub fn aligned_to(&self, dates: &[YearMonth]) -> Result<Vec<f64>> {
        dates
            .iter()
            .map(|d| {
                self.value_at(*d)
                    .ok_or_else(|| Error::arg(format!("series has no observation for {d}")))
            })
            .collect()
    }
}
