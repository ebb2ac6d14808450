//! Multiple structural breaks in the second moments of estimated factors.
//!
//! Breaks are located by minimizing the SSNE objective with a dynamic
//! program over admissible partitions; the number of breaks is chosen with
//! the UDmax/WDmax tests followed by sequential `F(l | l+1)` tests.

mod battery;
pub mod critical;
mod moments;
mod search;

pub use battery::{BreakBattery, SupF};
pub use critical::{simulate_critical_values, CriticalSimConfig, CriticalValueTable, TestFamily};
pub use moments::{default_bandwidth, demean, hac_long_run_cov, vech_len, vech_moments, Kernel, LongRunCov};
pub use search::{min_segment_length, BreakSearch, Partition, SsneObjective};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::exec::Execution;
use crate::factor::{estimate_factors, FactorEstimate};
use crate::panel::YearMonth;
use crate::{Error, Result};

/// Objective for a factor path, with the long-run covariance estimated on the
/// full-sample demeaned moments.
pub fn objective_for(factors: &DMatrix<f64>, bandwidth: Option<usize>) -> Result<(SsneObjective, LongRunCov)> {
    let z = vech_moments(factors)?;
    let omega = hac_long_run_cov(&demean(&z), bandwidth)?;
    Ok((SsneObjective::new(&z, &omega)?, omega))
}

/// SSNE of a factor path for the given break indices under `omega`.
pub fn ssne(factors: &DMatrix<f64>, breaks: &[usize], omega: &LongRunCov) -> Result<f64> {
    let z = vech_moments(factors)?;
    SsneObjective::new(&z, omega)?.ssne(breaks)
}

/// Globally optimal `m`-break partition of a factor path.
pub fn dp_break_search(factors: &DMatrix<f64>, m: usize, epsilon: f64, omega: &LongRunCov) -> Result<Partition> {
    let z = vech_moments(factors)?;
    let obj = SsneObjective::new(&z, omega)?;
    let h = min_segment_length(epsilon, obj.len(), obj.nu());
    if (m + 1) * h > obj.len() {
        return Err(Error::arg(format!(
            "{m} breaks with trimming {epsilon} do not fit in T = {}",
            obj.len()
        )));
    }
    BreakSearch::new(&obj, h, Execution::Sequential)?.optimal(m)
}

/// sup-F statistic for `l` breaks.
pub fn sup_f_test(factors: &DMatrix<f64>, l: usize, epsilon: f64, omega: &LongRunCov) -> Result<SupF> {
    let z = vech_moments(factors)?;
    let obj = SsneObjective::new(&z, omega)?;
    BreakBattery::new(&obj, epsilon, l, Execution::Sequential)?.sup_f(l)
}

/// UDmax and WDmax over up to `max_l` breaks.
pub fn udmax_wdmax(
    factors: &DMatrix<f64>,
    max_l: usize,
    epsilon: f64,
    omega: &LongRunCov,
    alpha: f64,
    table: &CriticalValueTable,
) -> Result<(f64, f64)> {
    let z = vech_moments(factors)?;
    let obj = SsneObjective::new(&z, omega)?;
    BreakBattery::new(&obj, epsilon, max_l, Execution::Sequential)?.dmax(max_l, alpha, table)
}

/// Sequential `F(l | l+1)` statistic.
pub fn sequential_test(factors: &DMatrix<f64>, l: usize, epsilon: f64, omega: &LongRunCov) -> Result<f64> {
    let z = vech_moments(factors)?;
    let obj = SsneObjective::new(&z, omega)?;
    BreakBattery::new(&obj, epsilon, l, Execution::Sequential)?.sequential(l)
}

/// Number of breaks chosen by the Dmax-then-sequential procedure.
pub fn decide_num_breaks(
    factors: &DMatrix<f64>,
    max_l: usize,
    epsilon: f64,
    alpha: f64,
    table: &CriticalValueTable,
) -> Result<usize> {
    let (obj, _) = objective_for(factors, None)?;
    BreakBattery::new(&obj, epsilon, max_l, Execution::Sequential)?.decide(max_l, alpha, table)
}

/// Settings for a full break analysis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BreakConfig {
    pub epsilon: f64,
    pub max_breaks: usize,
    pub alpha: f64,
    #[serde(default = "one")]
    pub r_tilde: usize,
    #[serde(default)]
    pub bandwidth: Option<usize>,
}

fn one() -> usize {
    1
}

impl Default for BreakConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.15,
            max_breaks: 5,
            alpha: 0.05,
            r_tilde: 1,
            bandwidth: None,
        }
    }
}

/// A fitted set of breaks with per-segment factor estimates.
#[derive(Clone, Debug)]
pub struct BreakModel {
    /// 1-based last observation of every regime except the final one.
    pub break_indices: Vec<usize>,
    pub epsilon: f64,
    pub min_length: usize,
    pub ssne: f64,
    pub segment_factors: Vec<FactorEstimate>,
    pub r_tilde: usize,
    pub n_periods: usize,
}

impl BreakModel {
    /// Half-open row ranges of the regimes.
    pub fn segments(&self) -> Vec<(usize, usize)> {
        segments_of(&self.break_indices, self.n_periods)
    }

    pub fn n_regimes(&self) -> usize {
        self.break_indices.len() + 1
    }

    /// Regime label of every period.
    pub fn regime_path(&self) -> Vec<usize> {
        let mut path = vec![0; self.n_periods];
        for (k, (a, b)) in self.segments().into_iter().enumerate() {
            path[a..b].fill(k);
        }
        path
    }

    /// The first factor of each segment stitched into one path.
    pub fn stitched_factor(&self) -> Vec<f64> {
        self.segment_factors.iter().flat_map(|f| f.factor(0)).collect()
    }
}

pub(crate) fn segments_of(breaks: &[usize], t: usize) -> Vec<(usize, usize)> {
    let mut bounds = vec![0];
    bounds.extend_from_slice(breaks);
    bounds.push(t);
    bounds.windows(2).map(|w| (w[0], w[1])).collect()
}

/// Standardizes rows `a..b` of `rates` within the segment. Columns that are
/// constant inside the segment carry no information there and are set to zero.
pub fn standardize_segment(rates: &DMatrix<f64>, a: usize, b: usize) -> DMatrix<f64> {
    let n = b - a;
    let mut seg = rates.rows(a, n).into_owned();
    for mut col in seg.column_iter_mut() {
        let mean = col.sum() / n as f64;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        let sd = var.sqrt();
        if sd > 1e-12 * (1.0 + mean.abs()) {
            col.apply(|v| *v = (*v - mean) / sd);
        } else {
            col.fill(0.0);
        }
    }
    seg
}

/// Estimates `r` factors in every regime from the segment's own data.
///
/// Each segment is standardized with its own moments, so the estimate for a
/// completed regime depends on nothing outside it.
pub fn segment_factors(rates: &DMatrix<f64>, breaks: &[usize], r: usize) -> Result<Vec<FactorEstimate>> {
    let t = rates.nrows();
    search::segment_bounds(breaks, t)?;
    segments_of(breaks, t)
        .into_iter()
        .map(|(a, b)| {
            if b - a < 2 {
                return Err(Error::arg(format!("segment ({a}, {b}] too short for factors")));
            }
            let seg = standardize_segment(rates, a, b);
            let mut est = estimate_factors(&seg, r)?;
            est.segment = (a, b);
            Ok(est)
        })
        .collect()
}

/// All statistics of a break analysis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BreakStatistics {
    /// sup-F for `l = 1..=L`; `None` where `l` breaks do not fit.
    #[serde(rename = "supF")]
    pub sup_f: Vec<Option<f64>>,
    pub udmax: f64,
    pub wdmax: f64,
    /// `F(l | l+1)` for `l = 1..=L`.
    pub sequential: Vec<Option<f64>>,
    pub critical_udmax: f64,
    pub critical_wdmax: f64,
    pub critical_sequential: Vec<Option<f64>>,
    pub decided_breaks: usize,
}

/// Output of [`analyze_breaks`].
#[derive(Clone, Debug)]
pub struct BreakAnalysis {
    pub full_sample: FactorEstimate,
    pub omega: LongRunCov,
    pub statistics: BreakStatistics,
    pub model: BreakModel,
    pub alpha: f64,
}

/// Estimates full-sample factors from the standardized panel, runs the test
/// battery, and fits the break model with the selected number of breaks.
///
/// `rates` is the unstandardized panel used for the per-segment factors; it
/// must have the same shape as `standardized`.
pub fn analyze_breaks(
    standardized: &DMatrix<f64>,
    rates: &DMatrix<f64>,
    config: &BreakConfig,
    table: &CriticalValueTable,
    exec: Execution,
) -> Result<BreakAnalysis> {
    if standardized.shape() != rates.shape() {
        return Err(Error::arg("standardized and raw panels differ in shape"));
    }
    let full = estimate_factors(standardized, config.r_tilde)?;
    let (obj, omega) = objective_for(&full.factors, config.bandwidth)?;
    let battery = BreakBattery::new(&obj, config.epsilon, config.max_breaks, exec)?;
    let nu = battery.nu();
    let big_l = config.max_breaks;
    if big_l == 0 {
        return Err(Error::arg("max_breaks must be at least 1"));
    }

    let sup_f = (1..=big_l).map(|l| battery.sup_f(l).ok().map(|s| s.statistic)).collect();
    let (udmax, wdmax) = battery.dmax(big_l, config.alpha, table)?;
    let sequential = (1..=big_l).map(|l| battery.sequential(l).ok()).collect();
    let critical_sequential = (1..=big_l)
        .map(|l| table.value(TestFamily::Sequential, nu, config.epsilon, config.alpha, l).ok())
        .collect();
    let decided = battery.decide(big_l, config.alpha, table)?;
    let statistics = BreakStatistics {
        sup_f,
        udmax,
        wdmax,
        sequential,
        critical_udmax: table.value(TestFamily::UDmax, nu, config.epsilon, config.alpha, big_l)?,
        critical_wdmax: table.value(TestFamily::WDmax, nu, config.epsilon, config.alpha, big_l)?,
        critical_sequential,
        decided_breaks: decided,
    };

    let partition = battery.partition(decided)?;
    let segment_factors = segment_factors(rates, &partition.breaks, config.r_tilde)?;
    let model = BreakModel {
        break_indices: partition.breaks,
        epsilon: config.epsilon,
        min_length: battery.min_length(),
        ssne: partition.ssne,
        segment_factors,
        r_tilde: config.r_tilde,
        n_periods: standardized.nrows(),
    };
    Ok(BreakAnalysis {
        full_sample: full,
        omega,
        statistics,
        model,
        alpha: config.alpha,
    })
}

/// Break model with a fixed set of breaks (no testing), e.g. zero breaks.
pub fn fixed_break_model(
    standardized: &DMatrix<f64>,
    rates: &DMatrix<f64>,
    breaks: &[usize],
    r: usize,
    epsilon: f64,
) -> Result<BreakModel> {
    let full = estimate_factors(standardized, r)?;
    let z = vech_moments(&full.factors)?;
    let nu = z.ncols();
    let ssne = if z.nrows() > 2 {
        let (obj, _) = objective_for(&full.factors, None)?;
        obj.ssne(breaks)?
    } else {
        0.0
    };
    Ok(BreakModel {
        break_indices: breaks.to_vec(),
        epsilon,
        min_length: min_segment_length(epsilon, standardized.nrows(), nu),
        ssne,
        segment_factors: segment_factors(rates, breaks, r)?,
        r_tilde: r,
        n_periods: standardized.nrows(),
    })
}

/// Serializable summary of a break analysis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BreakReport {
    pub break_indices: Vec<usize>,
    /// Date of the last observation of each regime that ends at a break.
    pub break_dates: Vec<YearMonth>,
    pub ssne: f64,
    pub statistics: BreakStatistics,
    pub epsilon: f64,
    pub alpha: f64,
    pub min_length: usize,
    pub bandwidth: usize,
    pub omega_ridge: f64,
}

impl BreakReport {
    pub fn new(analysis: &BreakAnalysis, dates: &[YearMonth]) -> Self {
        let m = &analysis.model;
        Self {
            break_indices: m.break_indices.clone(),
            break_dates: m.break_indices.iter().map(|&b| dates[b - 1]).collect(),
            ssne: m.ssne,
            statistics: analysis.statistics.clone(),
            epsilon: m.epsilon,
            alpha: analysis.alpha,
            min_length: m.min_length,
            bandwidth: analysis.omega.bandwidth,
            omega_ridge: analysis.omega.ridge,
        }
    }
}
