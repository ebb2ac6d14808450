//! Real-time evaluation: expanding-window vintages, revision statistics,
//! h-step forecast errors, and the Model Confidence Set.

mod mcs;
mod vintage;

pub use mcs::{mcs, BootstrapOptions, LossPanel, McsResult, McsStatistic};
pub use vintage::{
    fit_model, revision_stats, rmsfe, run_vintages, vintage_fan, FanRow, ModelId, ModelSpec, RevisionMetric,
    VintageOutcome, VintageRun,
};

use serde::{Deserialize, Serialize};

use crate::exec::Execution;
use crate::panel::{InflationSeries, PricePanel, YearMonth};
use crate::{Error, Result};

/// Named evaluation samples.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SamplePreset {
    PreCovid,
    RisingInflation,
    InflationNormalization,
    PostCovid,
    Full,
}

impl SamplePreset {
    pub const ALL: [SamplePreset; 5] = [
        SamplePreset::PreCovid,
        SamplePreset::RisingInflation,
        SamplePreset::InflationNormalization,
        SamplePreset::PostCovid,
        SamplePreset::Full,
    ];

    /// Inclusive first and last month.
    pub fn range(self) -> (YearMonth, YearMonth) {
        let ym = |y, m| YearMonth::new(y, m).expect("valid month");
        match self {
            SamplePreset::PreCovid => (ym(1990, 1), ym(2019, 12)),
            SamplePreset::RisingInflation => (ym(2020, 1), ym(2022, 12)),
            SamplePreset::InflationNormalization => (ym(2023, 1), ym(2023, 12)),
            SamplePreset::PostCovid => (ym(2020, 1), ym(2023, 12)),
            SamplePreset::Full => (ym(1990, 1), ym(2023, 12)),
        }
    }
}

/// Revision statistic for one model and sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RevisionRow {
    pub model: String,
    pub sample: String,
    pub start: YearMonth,
    pub end: YearMonth,
    pub rmsd: Option<f64>,
    pub mad: Option<f64>,
}

/// RMSFE and MCS outcome for one model at one horizon.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForecastRow {
    pub model: String,
    pub horizon: usize,
    pub start: YearMonth,
    pub end: YearMonth,
    pub rmsfe: f64,
    pub mcs_p_value: f64,
    pub in_mcs: bool,
}

/// Report mirroring the revision and forecasting tables.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub transform: String,
    pub revisions: Vec<RevisionRow>,
    pub forecasts: Vec<ForecastRow>,
    pub mcs_alpha: f64,
    pub mcs_statistic: McsStatistic,
    /// Vintages that failed, as `(model, vintage, reason)`.
    pub failures: Vec<(String, YearMonth, String)>,
}

/// Settings for [`evaluate_models`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationConfig {
    pub vintage_start: YearMonth,
    pub vintage_end: YearMonth,
    #[serde(default = "all_presets")]
    pub samples: Vec<SamplePreset>,
    #[serde(default = "default_horizons")]
    pub horizons: Vec<usize>,
    /// Inclusive ranges of forecast target months.
    #[serde(default = "default_windows")]
    pub forecast_windows: Vec<(YearMonth, YearMonth)>,
    #[serde(default = "default_mcs_alpha")]
    pub mcs_alpha: f64,
    #[serde(default = "default_statistic")]
    pub mcs_statistic: McsStatistic,
    #[serde(default)]
    pub bootstrap: BootstrapOptions,
}

fn all_presets() -> Vec<SamplePreset> {
    SamplePreset::ALL.to_vec()
}

fn default_horizons() -> Vec<usize> {
    (1..=12).collect()
}

fn default_windows() -> Vec<(YearMonth, YearMonth)> {
    let ym = |y, m| YearMonth::new(y, m).expect("valid month");
    vec![(ym(2020, 1), ym(2023, 12)), (ym(2007, 1), ym(2023, 12))]
}

fn default_mcs_alpha() -> f64 {
    0.25
}

fn default_statistic() -> McsStatistic {
    McsStatistic::Tmax
}

impl EvaluationConfig {
    pub fn new(vintage_start: YearMonth, vintage_end: YearMonth) -> Self {
        Self {
            vintage_start,
            vintage_end,
            samples: all_presets(),
            horizons: default_horizons(),
            forecast_windows: default_windows(),
            mcs_alpha: default_mcs_alpha(),
            mcs_statistic: default_statistic(),
            bootstrap: BootstrapOptions::default(),
        }
    }
}

/// Runs every model over the vintage range and tabulates revisions, RMSFEs
/// and MCS membership.
///
/// Samples whose end lies outside the vintage range, and forecast windows
/// whose origins lack real-time estimates, are skipped: revision cells are
/// left empty and forecast rows are omitted.
pub fn evaluate_models(
    rates: &PricePanel,
    headline: &InflationSeries,
    specs: &[ModelSpec],
    config: &EvaluationConfig,
    exec: Execution,
) -> Result<(EvaluationReport, Vec<VintageRun>)> {
    if specs.is_empty() {
        return Err(Error::arg("no models to evaluate"));
    }
    let runs = specs
        .iter()
        .map(|s| run_vintages(rates, headline, s, config.vintage_start, config.vintage_end, exec))
        .collect::<Result<Vec<_>>>()?;
    let mut revisions = Vec::new();
    for run in &runs {
        for preset in &config.samples {
            let range = preset.range();
            let stat = |m| revision_stats(run, range, m, rates.transform()).ok();
            revisions.push(RevisionRow {
                model: run.model.label().to_string(),
                sample: format!("{preset:?}"),
                start: range.0,
                end: range.1,
                rmsd: stat(RevisionMetric::Rmsd),
                mad: stat(RevisionMetric::Mad),
            });
        }
    }
    let mut forecasts = Vec::new();
    let refs: Vec<&VintageRun> = runs.iter().collect();
    for &window in &config.forecast_windows {
        for &h in &config.horizons {
            let Ok(panel) = LossPanel::from_runs(&refs, headline, h, window) else {
                continue;
            };
            let set = if runs.len() >= 2 {
                Some(mcs(&panel, config.mcs_alpha, config.mcs_statistic, &config.bootstrap, exec)?)
            } else {
                None
            };
            for (k, run) in runs.iter().enumerate() {
                let col = panel.losses.column(k);
                forecasts.push(ForecastRow {
                    model: run.model.label().to_string(),
                    horizon: h,
                    start: window.0,
                    end: window.1,
                    rmsfe: col.mean().sqrt(),
                    mcs_p_value: set.as_ref().map_or(1.0, |s| s.p_values[k]),
                    in_mcs: set.as_ref().is_none_or(|s| s.survivors.contains(&k)),
                });
            }
        }
    }
    let failures = runs
        .iter()
        .flat_map(|r| {
            r.failures()
                .map(move |(v, e)| (r.model.label().to_string(), v, e.to_string()))
        })
        .collect();
    let report = EvaluationReport {
        transform: format!("{:?}", rates.transform()),
        revisions,
        forecasts,
        mcs_alpha: config.mcs_alpha,
        mcs_statistic: config.mcs_statistic,
        failures,
    };
    Ok((report, runs))
}
