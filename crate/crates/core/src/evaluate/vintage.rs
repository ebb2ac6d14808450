use serde::{Deserialize, Serialize};

use crate::breaks::{analyze_breaks, BreakConfig, CriticalValueTable};
use crate::exec::Execution;
use crate::factor::estimate_factors;
use crate::indicator::{fit_baseline, fit_ms, fit_sc, IndicatorSeries, MsWeighting};
use crate::msfactor::{em_fit, EmOptions};
use crate::panel::{standardize, InflationSeries, PricePanel, SeriesKind, Transform, YearMonth};
use crate::{Error, Result};

/// Model variants compared in the evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelId {
    M1,
    M2,
    M3,
    M4,
    SC,
}

impl ModelId {
    /// Number of Markov regimes, `None` for the break model.
    pub fn regimes(self) -> Option<usize> {
        match self {
            ModelId::M1 => Some(1),
            ModelId::M2 => Some(2),
            ModelId::M3 => Some(3),
            ModelId::M4 => Some(4),
            ModelId::SC => None,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            ModelId::M1 => "M1",
            ModelId::M2 => "M2",
            ModelId::M3 => "M3",
            ModelId::M4 => "M4",
            ModelId::SC => "SC",
        }
    }
}

fn one() -> usize {
    1
}

/// A model and its hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub id: ModelId,
    #[serde(default = "one")]
    pub r: usize,
    #[serde(default)]
    pub em: EmOptions,
    #[serde(default)]
    pub weighting: MsWeighting,
    #[serde(default)]
    pub breaks: BreakConfig,
}

impl ModelSpec {
    pub fn new(id: ModelId) -> Self {
        Self {
            id,
            r: 1,
            em: EmOptions::default(),
            weighting: MsWeighting::default(),
            breaks: BreakConfig::default(),
        }
    }
}

/// Standardizes `rates` on its own sample and fits the indicator.
pub fn fit_model(rates: &PricePanel, headline: &InflationSeries, spec: &ModelSpec, exec: Execution) -> Result<IndicatorSeries> {
    if !matches!(rates.transform(), Transform::YoY | Transform::MoM) {
        return Err(Error::arg("models are fitted on YoY or MoM rate panels"));
    }
    let x = standardize(rates, None)?;
    let head = InflationSeries::new(
        rates.dates().to_vec(),
        headline.aligned_to(rates.dates())?,
        SeriesKind::Headline,
    )?;
    match spec.id.regimes() {
        Some(1) => {
            let f = estimate_factors(x.values(), spec.r)?;
            fit_baseline(&head, &f.factor(0))
        }
        Some(m) => {
            let model = em_fit(x.values(), m, spec.r, &spec.em, exec)?;
            fit_ms(&head, &model, spec.weighting)
        }
        None => {
            let cfg = BreakConfig {
                r_tilde: spec.r,
                ..spec.breaks.clone()
            };
            let a = analyze_breaks(x.values(), rates.values(), &cfg, CriticalValueTable::embedded(), exec)?;
            fit_sc(&head, &a.model)
        }
    }
}

/// One vintage: the fit on data through `vintage`, or why it failed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VintageOutcome {
    pub vintage: YearMonth,
    pub series: Option<IndicatorSeries>,
    pub error: Option<String>,
}

/// Expanding-window fits of one model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VintageRun {
    pub model: ModelId,
    pub transform: Transform,
    pub vintages: Vec<VintageOutcome>,
}

impl VintageRun {
    pub fn series_at(&self, vintage: YearMonth) -> Option<&IndicatorSeries> {
        let first = self.vintages.first()?.vintage;
        let k = vintage.months_since(first);
        if k < 0 {
            return None;
        }
        self.vintages.get(k as usize)?.series.as_ref()
    }

    /// Real-time estimate `pi^r_t`: the last value of the vintage-`t` fit.
    pub fn realtime_at(&self, date: YearMonth) -> Option<f64> {
        self.series_at(date).map(|s| s.last())
    }

    pub fn realtime_path(&self) -> Vec<(YearMonth, f64)> {
        self.vintages
            .iter()
            .filter_map(|v| v.series.as_ref().map(|s| (v.vintage, s.last())))
            .collect()
    }

    /// Full-information fit for a sample ending at `end`.
    pub fn full_info(&self, end: YearMonth) -> Option<&IndicatorSeries> {
        self.series_at(end)
    }

    /// Change in the estimate for `date` between two vintages.
    pub fn revision(&self, date: YearMonth, from: YearMonth, to: YearMonth) -> Option<f64> {
        Some(self.series_at(to)?.value_at(date)? - self.series_at(from)?.value_at(date)?)
    }

    pub fn failures(&self) -> impl Iterator<Item = (YearMonth, &str)> {
        self.vintages
            .iter()
            .filter_map(|v| v.error.as_deref().map(|e| (v.vintage, e)))
    }
}

/// Fits `spec` on every vintage from `start` to `end` inclusive, each on data
/// through that vintage only. Failed vintages are recorded, not fatal.
pub fn run_vintages(
    rates: &PricePanel,
    headline: &InflationSeries,
    spec: &ModelSpec,
    start: YearMonth,
    end: YearMonth,
    exec: Execution,
) -> Result<VintageRun> {
    let first = *rates.dates().first().ok_or_else(|| Error::arg("empty panel"))?;
    if end < start {
        return Err(Error::arg("end vintage precedes start vintage"));
    }
    if rates.index_of(end).is_none() {
        return Err(Error::arg(format!("end vintage {end} is outside the panel calendar")));
    }
    if start.months_since(first) < 23 {
        return Err(Error::arg(format!(
            "start vintage {start} leaves fewer than 24 months of data"
        )));
    }
    let n = end.months_since(start) as usize + 1;
    let vintages = exec.map(n, |k| {
        let vintage = start.add_months(k as i64);
        let fit = rates
            .truncate_to(vintage)
            .and_then(|p| fit_model(&p, headline, spec, Execution::Sequential));
        match fit {
            Ok(series) => VintageOutcome {
                vintage,
                series: Some(series),
                error: None,
            },
            Err(e) => VintageOutcome {
                vintage,
                series: None,
                error: Some(e.to_string()),
            },
        }
    });
    Ok(VintageRun {
        model: spec.id,
        transform: rates.transform(),
        vintages,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum RevisionMetric {
    /// Root mean squared difference.
    Rmsd,
    /// Mean absolute difference.
    Mad,
    /// Mean squared difference, without the root.
    Msd,
}

/// Distance between real-time estimates and the full-information fit for
/// the sample ending at `sample.1`, over the sample's dates.
pub fn revision_stats(
    run: &VintageRun,
    sample: (YearMonth, YearMonth),
    metric: RevisionMetric,
    rate: Transform,
) -> Result<f64> {
    if run.transform != rate {
        return Err(Error::arg(format!(
            "run was fitted on {:?} rates, not {rate:?}",
            run.transform
        )));
    }
    let (start, end) = sample;
    let full = run
        .full_info(end)
        .ok_or_else(|| Error::arg(format!("no full-information fit for sample end {end}")))?;
    let diffs: Vec<f64> = (0..=end.months_since(start).max(-1))
        .filter_map(|k| {
            let d = start.add_months(k);
            Some(run.realtime_at(d)? - full.value_at(d)?)
        })
        .collect();
    if diffs.is_empty() {
        return Err(Error::arg(format!("no real-time estimates between {start} and {end}")));
    }
    let n = diffs.len() as f64;
    Ok(match metric {
        RevisionMetric::Rmsd => (diffs.iter().map(|d| d * d).sum::<f64>() / n).sqrt(),
        RevisionMetric::Mad => diffs.iter().map(|d| d.abs()).sum::<f64>() / n,
        RevisionMetric::Msd => diffs.iter().map(|d| d * d).sum::<f64>() / n,
    })
}

/// Squared errors of the real-time indicator at `t - h` against headline at
/// `t`, for every target month `t` in `window`.
pub(crate) fn forecast_losses(
    run: &VintageRun,
    headline: &InflationSeries,
    h: usize,
    window: (YearMonth, YearMonth),
) -> Result<Vec<f64>> {
    let (start, end) = window;
    if end < start {
        return Err(Error::arg("forecast window is empty"));
    }
    (0..=end.months_since(start))
        .map(|k| {
            let target = start.add_months(k);
            let origin = target.add_months(-(h as i64));
            let actual = headline
                .value_at(target)
                .ok_or_else(|| Error::arg(format!("no headline observation for {target}")))?;
            let forecast = run
                .realtime_at(origin)
                .ok_or_else(|| Error::arg(format!("no real-time estimate at origin {origin}")))?;
            Ok((forecast - actual).powi(2))
        })
        .collect()
}

/// Root mean squared error of the real-time indicator level as an `h`-step
/// forecast of headline, over targets in `window`.
pub fn rmsfe(run: &VintageRun, headline: &InflationSeries, h: usize, window: (YearMonth, YearMonth)) -> Result<f64> {
    let losses = forecast_losses(run, headline, h, window)?;
    Ok((losses.iter().sum::<f64>() / losses.len() as f64).sqrt())
}

/// One point of a stacked-vintage chart.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FanRow {
    pub vintage: YearMonth,
    pub date: YearMonth,
    pub value: f64,
}

/// Every vintage's full path in long format.
pub fn vintage_fan(run: &VintageRun) -> Vec<FanRow> {
    run.vintages
        .iter()
        .filter_map(|v| v.series.as_ref().map(|s| (v.vintage, s)))
        .flat_map(|(vintage, s)| {
            s.dates.iter().zip(&s.values).map(move |(&date, &value)| FanRow { vintage, date, value })
        })
        .collect()
}
