use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::vintage::{forecast_losses, VintageRun};
use crate::exec::Execution;
use crate::panel::{InflationSeries, YearMonth};
use crate::{Error, Result};

/// Forecast losses, one row per origin and one column per model.
#[derive(Clone, Debug, PartialEq)]
pub struct LossPanel {
    pub losses: DMatrix<f64>,
    pub models: Vec<String>,
    pub horizon: usize,
}

impl LossPanel {
    pub fn new(losses: DMatrix<f64>, models: Vec<String>, horizon: usize) -> Result<Self> {
        if losses.ncols() != models.len() {
            return Err(Error::arg("one model name per loss column is required"));
        }
        if losses.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
            return Err(Error::arg("losses must be finite and non-negative"));
        }
        Ok(Self {
            losses,
            models,
            horizon,
        })
    }

    /// Squared-error losses of several vintage runs at horizon `h`.
    pub fn from_runs(runs: &[&VintageRun], headline: &InflationSeries, h: usize, window: (YearMonth, YearMonth)) -> Result<Self> {
        let cols = runs
            .iter()
            .map(|r| forecast_losses(r, headline, h, window))
            .collect::<Result<Vec<_>>>()?;
        let t = cols.first().map_or(0, Vec::len);
        let losses = DMatrix::from_fn(t, cols.len(), |i, k| cols[k][i]);
        Self::new(losses, runs.iter().map(|r| r.model.label().to_string()).collect(), h)
    }

    /// CSV with one column per model.
    pub fn to_csv(&self) -> String {
        let mut out = format!("origin,{}\n", self.models.join(","));
        for (t, row) in self.losses.row_iter().enumerate() {
            let vals: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            out.push_str(&format!("{t},{}\n", vals.join(",")));
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum McsStatistic {
    /// Largest studentized loss of a model relative to the set average.
    Tmax,
    /// Largest studentized pairwise loss differential.
    TR,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BootstrapOptions {
    /// Moving-block length; `None` uses `ceil(T^(1/3))`.
    pub block_len: Option<usize>,
    pub n_boot: usize,
    pub seed: u64,
}

impl Default for BootstrapOptions {
    fn default() -> Self {
        Self {
            block_len: None,
            n_boot: 5000,
            seed: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McsResult {
    /// Indices of models in the confidence set, ascending.
    pub survivors: Vec<usize>,
    /// MCS p-value of every model.
    pub p_values: Vec<f64>,
    /// Models in the order they were eliminated; the last entry survives
    /// every test.
    pub elimination_order: Vec<usize>,
}

/// Column means of the panel over a moving-block resample for every replication.
fn bootstrap_means(losses: &DMatrix<f64>, opts: &BootstrapOptions, exec: Execution) -> DMatrix<f64> {
    let (t, k) = losses.shape();
    let block = opts
        .block_len
        .unwrap_or_else(|| (t as f64).cbrt().ceil() as usize)
        .clamp(1, t);
    let rows = exec.map(opts.n_boot, |b| {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        rng.set_stream(b as u64);
        let mut sums = vec![0.0; k];
        let mut filled = 0;
        while filled < t {
            let start = rng.random_range(0..=t - block);
            for i in start..(start + block).min(start + t - filled) {
                for (c, s) in sums.iter_mut().enumerate() {
                    *s += losses[(i, c)];
                }
            }
            filled += block.min(t - filled);
        }
        sums.into_iter().map(|s| s / t as f64).collect::<Vec<f64>>()
    });
    DMatrix::from_fn(opts.n_boot, k, |b, c| rows[b][c])
}

struct Step {
    p_value: f64,
    worst: usize,
}

fn set_is_degenerate(losses: &DMatrix<f64>, set: &[usize]) -> bool {
    let first = set[0];
    set.iter()
        .all(|&j| (0..losses.nrows()).all(|t| losses[(t, j)] == losses[(t, first)]))
}

fn test_step(means: &[f64], boot: &DMatrix<f64>, set: &[usize], stat: McsStatistic) -> Step {
    let n_boot = boot.nrows() as f64;
    let sd_floor = 1e-300;
    match stat {
        McsStatistic::Tmax => {
            let avg = set.iter().map(|&j| means[j]).sum::<f64>() / set.len() as f64;
            let centered: Vec<Vec<f64>> = boot
                .row_iter()
                .map(|row| {
                    let bavg = set.iter().map(|&j| row[j]).sum::<f64>() / set.len() as f64;
                    set.iter().map(|&j| (row[j] - bavg) - (means[j] - avg)).collect()
                })
                .collect();
            let sd: Vec<f64> = (0..set.len())
                .map(|i| (centered.iter().map(|c| c[i] * c[i]).sum::<f64>() / n_boot).sqrt().max(sd_floor))
                .collect();
            let t: Vec<f64> = set.iter().enumerate().map(|(i, &j)| (means[j] - avg) / sd[i]).collect();
            let (worst_i, &stat_obs) = t
                .iter()
                .enumerate()
                .fold((0, &f64::NEG_INFINITY), |acc, (i, v)| if *v > *acc.1 { (i, v) } else { acc });
            let exceed = centered
                .iter()
                .filter(|c| c.iter().zip(&sd).map(|(v, s)| v / s).fold(f64::NEG_INFINITY, f64::max) >= stat_obs)
                .count();
            Step {
                p_value: exceed as f64 / n_boot,
                worst: set[worst_i],
            }
        }
        McsStatistic::TR => {
            let m = set.len();
            let mut sd = vec![vec![sd_floor; m]; m];
            for a in 0..m {
                for b in a + 1..m {
                    let d0 = means[set[a]] - means[set[b]];
                    let v = boot
                        .row_iter()
                        .map(|row| (row[set[a]] - row[set[b]] - d0).powi(2))
                        .sum::<f64>()
                        / n_boot;
                    sd[a][b] = v.sqrt().max(sd_floor);
                    sd[b][a] = sd[a][b];
                }
            }
            let tij = |a: usize, b: usize| (means[set[a]] - means[set[b]]) / sd[a][b];
            let mut stat_obs = 0.0f64;
            for a in 0..m {
                for b in a + 1..m {
                    stat_obs = stat_obs.max(tij(a, b).abs());
                }
            }
            let worst_i = (0..m)
                .map(|a| (a, (0..m).filter(|&b| b != a).map(|b| tij(a, b)).fold(f64::NEG_INFINITY, f64::max)))
                .fold((0, f64::NEG_INFINITY), |acc, (a, v)| if v > acc.1 { (a, v) } else { acc })
                .0;
            let exceed = boot
                .row_iter()
                .filter(|row| {
                    let mut s = 0.0f64;
                    for a in 0..m {
                        for b in a + 1..m {
                            let d0 = means[set[a]] - means[set[b]];
                            s = s.max(((row[set[a]] - row[set[b]] - d0) / sd[a][b]).abs());
                        }
                    }
                    s >= stat_obs
                })
                .count();
            Step {
                p_value: exceed as f64 / n_boot,
                worst: set[worst_i],
            }
        }
    }
}

/// Model Confidence Set by sequential elimination.
///
/// The whole elimination sequence is computed; each eliminated model carries
/// the running maximum of the test p-values up to its elimination, and the
/// confidence set is every model whose p-value is at least `alpha`. This
/// makes the sets nested across `alpha`.
pub fn mcs(
    losses: &LossPanel,
    alpha: f64,
    statistic: McsStatistic,
    bootstrap: &BootstrapOptions,
    exec: Execution,
) -> Result<McsResult> {
    let (t, k) = losses.losses.shape();
    if k < 2 {
        return Err(Error::arg("the MCS needs at least two models"));
    }
    if t < 20 {
        return Err(Error::arg(format!("the MCS needs at least 20 forecast origins, got {t}")));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::arg("alpha must lie in (0, 1)"));
    }
    if bootstrap.n_boot == 0 {
        return Err(Error::arg("n_boot must be positive"));
    }
    let means: Vec<f64> = losses.losses.column_iter().map(|c| c.mean()).collect();
    let boot = bootstrap_means(&losses.losses, bootstrap, exec);

    let mut set: Vec<usize> = (0..k).collect();
    let mut p_values = vec![1.0; k];
    let mut order = Vec::with_capacity(k);
    let mut running = 0.0f64;
    while set.len() > 1 {
        if set_is_degenerate(&losses.losses, &set) {
            break;
        }
        let step = test_step(&means, &boot, &set, statistic);
        running = running.max(step.p_value);
        p_values[step.worst] = running;
        order.push(step.worst);
        set.retain(|&j| j != step.worst);
    }
    // remaining models were never rejected
    order.extend(set.iter().copied());
    let survivors = (0..k).filter(|&j| p_values[j] >= alpha).collect();
    Ok(McsResult {
        survivors,
        p_values,
        elimination_order: order,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    fn panel(rng: &mut ChaCha8Rng, t: usize, shifts: &[f64]) -> LossPanel {
        let l = DMatrix::from_fn(t, shifts.len(), |_, c| {
            let z: f64 = StandardNormal.sample(rng);
            (1.0 + shifts[c] + 0.2 * z).max(0.0)
        });
        LossPanel::new(l, (0..shifts.len()).map(|c| format!("m{c}")).collect(), 1).unwrap()
    }

    fn quick() -> BootstrapOptions {
        BootstrapOptions {
            n_boot: 500,
            ..Default::default()
        }
    }

    #[test]
    fn identical_losses_all_survive() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let base = panel(&mut rng, 40, &[0.0]);
        let l = DMatrix::from_fn(40, 3, |t, _| base.losses[(t, 0)]);
        let p = LossPanel::new(l, vec!["a".into(), "b".into(), "c".into()], 1).unwrap();
        for stat in [McsStatistic::Tmax, McsStatistic::TR] {
            let r = mcs(&p, 0.25, stat, &quick(), Execution::Sequential).unwrap();
            assert_eq!(r.survivors, vec![0, 1, 2]);
            assert!(r.p_values.iter().all(|p| *p == 1.0));
        }
    }

    #[test]
    fn dominated_model_is_eliminated() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = panel(&mut rng, 200, &[0.0, 0.0, 1.0]);
        for stat in [McsStatistic::Tmax, McsStatistic::TR] {
            let r = mcs(&p, 0.25, stat, &quick(), Execution::Parallel).unwrap();
            assert!(!r.survivors.contains(&2), "{stat:?}: {r:?}");
            assert_eq!(r.elimination_order[0], 2);
        }
    }

    #[test]
    fn nested_and_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = panel(&mut rng, 60, &[0.0, 0.02, 0.05, 0.1]);
        let a = mcs(&p, 0.25, McsStatistic::Tmax, &quick(), Execution::Parallel).unwrap();
        let b = mcs(&p, 0.10, McsStatistic::Tmax, &quick(), Execution::Sequential).unwrap();
        assert_eq!(a.p_values, b.p_values);
        assert!(a.survivors.iter().all(|j| b.survivors.contains(j)));
        assert_eq!(a.elimination_order.len(), 4);
    }

    #[test]
    fn input_checks() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = panel(&mut rng, 10, &[0.0, 0.1]);
        assert!(mcs(&p, 0.1, McsStatistic::Tmax, &quick(), Execution::Sequential).is_err());
        let p = panel(&mut rng, 30, &[0.0]);
        assert!(mcs(&p, 0.1, McsStatistic::Tmax, &quick(), Execution::Sequential).is_err());
        assert!(LossPanel::new(DMatrix::from_element(3, 1, -1.0), vec!["a".into()], 1).is_err());
    }
}
