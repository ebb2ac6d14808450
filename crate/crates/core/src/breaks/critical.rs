//! Critical values for the break tests.
//!
//! The null distributions are functionals of `nu`-dimensional Brownian
//! motion. [`simulate_critical_values`] approximates them by Monte Carlo on
//! discretized paths (i.i.d. standard normal moments with identity weighting),
//! and the crate ships a table produced that way in `data/critical_values.json`.

use nalgebra::DMatrix;
use once_cell::sync::Lazy;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::search::{BreakSearch, SsneObjective};
use crate::exec::Execution;
use crate::{Error, Result};

pub const TRIMMINGS: [f64; 4] = [0.05, 0.10, 0.15, 0.25];
pub const ALPHAS: [f64; 3] = [0.10, 0.05, 0.01];
pub const MAX_NU: usize = 6;
pub const MAX_L: usize = 8;

/// Critical values for one `(nu, trimming, alpha)` cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriticalEntry {
    pub nu: usize,
    pub trimming: f64,
    pub alpha: f64,
    /// `sup_f[l-1]` for `l = 1..=8` breaks; `None` where infeasible.
    pub sup_f: Vec<Option<f64>>,
    /// `udmax[L-1]` for maximum break counts `L = 1..=8`.
    pub udmax: Vec<Option<f64>>,
    pub wdmax: Vec<Option<f64>>,
    /// `sequential[l]` for the test of `l` against `l + 1` breaks,
    /// `l = 0..=8`.
    pub sequential: Vec<Option<f64>>,
}

/// Settings used to produce a table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriticalSimConfig {
    /// Length of the discretized path.
    pub t_sim: usize,
    /// Replications for the multiple-break functionals.
    pub reps_multi: usize,
    /// Replications for the single-break functional behind the sequential test.
    pub reps_single: usize,
    pub seed: u64,
}

impl Default for CriticalSimConfig {
    fn default() -> Self {
        Self {
            t_sim: 500,
            reps_multi: 5_000,
            reps_single: 50_000,
            seed: 20_240_101,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriticalValueTable {
    pub config: CriticalSimConfig,
    pub entries: Vec<CriticalEntry>,
}

static EMBEDDED: Lazy<CriticalValueTable> = Lazy::new(|| {
    serde_json::from_str(include_str!("../../data/critical_values.json"))
        .expect("embedded critical value table is valid JSON")
});

/// Which test a critical value belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TestFamily {
    SupF,
    UDmax,
    WDmax,
    Sequential,
}

impl CriticalValueTable {
    /// The table shipped with the crate.
    pub fn embedded() -> &'static CriticalValueTable {
        &EMBEDDED
    }

    /// Smallest tabulated trimming not below `epsilon`.
    pub fn trimming_for(epsilon: f64) -> Option<f64> {
        TRIMMINGS.iter().copied().find(|&tr| tr + 1e-12 >= epsilon)
    }

    fn entry(&self, nu: usize, epsilon: f64, alpha: f64) -> Result<&CriticalEntry> {
        let missing = || {
            Error::MissingCriticalValue(format!(
                "nu = {nu}, alpha = {alpha}, epsilon = {epsilon}"
            ))
        };
        let trim = Self::trimming_for(epsilon).ok_or_else(missing)?;
        self.entries
            .iter()
            .find(|e| {
                e.nu == nu && (e.trimming - trim).abs() < 1e-9 && (e.alpha - alpha).abs() < 1e-9
            })
            .ok_or_else(missing)
    }

    /// Critical value for `family` with `l` breaks (for `UDmax`/`WDmax`, `l`
    /// is the maximum break count `L`; for `Sequential`, the null count).
    pub fn value(&self, family: TestFamily, nu: usize, epsilon: f64, alpha: f64, l: usize) -> Result<f64> {
        let e = self.entry(nu, epsilon, alpha)?;
        let slot = match family {
            TestFamily::SupF => l.checked_sub(1).and_then(|i| e.sup_f.get(i)),
            TestFamily::UDmax => l.checked_sub(1).and_then(|i| e.udmax.get(i)),
            TestFamily::WDmax => l.checked_sub(1).and_then(|i| e.wdmax.get(i)),
            TestFamily::Sequential => e.sequential.get(l),
        };
        slot.copied().flatten().ok_or_else(|| {
            Error::MissingCriticalValue(format!(
                "{family:?} with nu = {nu}, alpha = {alpha}, l = {l}, trimming = {}",
                e.trimming
            ))
        })
    }

    /// WDmax weights `c(nu, alpha, 1) / c(nu, alpha, l)` for `l = 1..=max_l`.
    pub fn wdmax_weights(&self, nu: usize, epsilon: f64, alpha: f64, max_l: usize) -> Result<Vec<f64>> {
        let c1 = self.value(TestFamily::SupF, nu, epsilon, alpha, 1)?;
        (1..=max_l)
            .map(|l| Ok(c1 / self.value(TestFamily::SupF, nu, epsilon, alpha, l)?))
            .collect()
    }
}

fn quantile(sorted: &[f64], p: f64) -> f64 {
    // type-7 interpolation
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn gaussian_path(rng: &mut ChaCha8Rng, t: usize, nu: usize) -> DMatrix<f64> {
    DMatrix::from_fn(t, nu, |_, _| StandardNormal.sample(rng))
}

/// Largest single-break reduction of the unweighted SSR, the statistic
/// whose distribution drives the sequential critical values.
fn single_break_stat(obj: &SsneObjective, h: usize) -> f64 {
    let t = obj.len();
    let base = obj.ssne0();
    let mut best = 0.0f64;
    for tau in h..=(t - h) {
        let v = base - obj.segment_cost(0, tau) - obj.segment_cost(tau, t);
        best = best.max(v);
    }
    best
}

/// Simulates the full table.
pub fn simulate_critical_values(config: &CriticalSimConfig, exec: Execution) -> Result<CriticalValueTable> {
    if config.t_sim < 40 || config.reps_multi < 100 || config.reps_single < 100 {
        return Err(Error::arg("critical value simulation needs t_sim >= 40 and >= 100 replications"));
    }
    let t = config.t_sim;
    let mut entries = Vec::new();
    for nu in 1..=MAX_NU {
        for (ti, &trim) in TRIMMINGS.iter().enumerate() {
            let h = min_len(trim, t);
            let max_l = (t / h - 1).min(MAX_L);
            let stream_base = ((nu * 16 + ti) as u64) << 40;

            // multi-break sup-F statistics per replication
            let sims: Vec<Vec<f64>> = exec.map(config.reps_multi, |rep| {
                let mut rng = rng_for(config.seed, stream_base + rep as u64);
                let z = gaussian_path(&mut rng, t, nu);
                let obj = SsneObjective::from_whitened(&z).expect("finite path");
                let search = BreakSearch::new(&obj, h, Execution::Sequential).expect("valid length");
                let parts = search.optimal_partitions(max_l);
                let s0 = obj.ssne0();
                (1..=max_l)
                    .map(|l| {
                        let p = parts[l].as_ref().expect("feasible");
                        (s0 - p.ssne) / (l * nu) as f64
                    })
                    .collect()
            });
            let singles: Vec<f64> = exec.map(config.reps_single, |rep| {
                let mut rng = rng_for(config.seed, stream_base + (1 << 32) + rep as u64);
                let z = gaussian_path(&mut rng, t, nu);
                let obj = SsneObjective::from_whitened(&z).expect("finite path");
                single_break_stat(&obj, h)
            });
            let singles = sorted(singles);

            for &alpha in &ALPHAS {
                let mut sup_f = vec![None; MAX_L];
                for l in 1..=max_l {
                    let col = sorted(sims.iter().map(|s| s[l - 1]).collect());
                    sup_f[l - 1] = Some(quantile(&col, 1.0 - alpha));
                }
                // the one-break value comes from the larger single-break sample
                sup_f[0] = Some(quantile(&singles, 1.0 - alpha) / nu as f64);

                let mut udmax = vec![None; MAX_L];
                let mut wdmax = vec![None; MAX_L];
                let c1 = sup_f[0].unwrap();
                for big_l in 1..=max_l {
                    let ud = sorted(
                        sims.iter()
                            .map(|s| s[..big_l].iter().copied().fold(f64::MIN, f64::max))
                            .collect(),
                    );
                    udmax[big_l - 1] = Some(quantile(&ud, 1.0 - alpha));
                    let wd = sorted(
                        sims.iter()
                            .map(|s| {
                                (0..big_l)
                                    .map(|i| s[i] * c1 / sup_f[i].unwrap())
                                    .fold(f64::MIN, f64::max)
                            })
                            .collect(),
                    );
                    wdmax[big_l - 1] = Some(quantile(&wd, 1.0 - alpha));
                }
                // with one break both double-max tests are the sup-F test
                udmax[0] = sup_f[0];
                wdmax[0] = sup_f[0];

                let sequential = (0..=MAX_L)
                    .map(|l| {
                        let p = (1.0 - alpha).powf(1.0 / (l as f64 + 1.0));
                        Some(quantile(&singles, p))
                    })
                    .collect();

                entries.push(CriticalEntry {
                    nu,
                    trimming: trim,
                    alpha,
                    sup_f,
                    udmax,
                    wdmax,
                    sequential,
                });
            }
        }
    }
    Ok(CriticalValueTable {
        config: config.clone(),
        entries,
    })
}

fn min_len(trim: f64, t: usize) -> usize {
    ((trim * t as f64 + 1e-9).floor() as usize).max(1)
}
