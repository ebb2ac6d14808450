use serde::{Deserialize, Serialize};

use super::critical::{CriticalValueTable, TestFamily};
use super::search::{min_segment_length, BreakSearch, Partition, SsneObjective};
use crate::exec::Execution;
use crate::{Error, Result};

/// A sup-F statistic with the break dates attaining it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupF {
    pub statistic: f64,
    pub breaks: Vec<usize>,
}

/// The testing battery over one moment series and trimming.
///
/// Optimal partitions for every break count up to the requested maximum are
/// computed once and shared by all statistics.
pub struct BreakBattery<'a> {
    search: BreakSearch<'a>,
    epsilon: f64,
    partitions: Vec<Option<Partition>>,
}

impl<'a> BreakBattery<'a> {
    pub fn new(objective: &'a SsneObjective, epsilon: f64, max_breaks: usize, exec: Execution) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon < 0.5) {
            return Err(Error::arg(format!("trimming epsilon = {epsilon} must lie in (0, 0.5)")));
        }
        let h = min_segment_length(epsilon, objective.len(), objective.nu());
        if 2 * h > objective.len() {
            return Err(Error::arg(format!(
                "trimming {epsilon} leaves no room for a break in T = {}",
                objective.len()
            )));
        }
        let search = BreakSearch::new(objective, h, exec)?;
        // one extra count so the sequential test can see l + 1
        let partitions = search.optimal_partitions(max_breaks + 1);
        Ok(Self {
            search,
            epsilon,
            partitions,
        })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn nu(&self) -> usize {
        self.search.objective().nu()
    }

    pub fn min_length(&self) -> usize {
        self.search.min_length()
    }

    pub fn ssne0(&self) -> f64 {
        self.search.objective().ssne0()
    }

    /// Globally optimal partition with `m` breaks.
    pub fn partition(&self, m: usize) -> Result<Partition> {
        match self.partitions.get(m) {
            Some(Some(p)) => Ok(p.clone()),
            Some(None) => Err(Error::arg(format!(
                "{m} breaks infeasible with minimum segment length {}",
                self.min_length()
            ))),
            None => self.search.optimal(m),
        }
    }

    /// `F = (SSNE_0 - SSNE(T_1..T_l)) / (l * nu)` at the optimal `l`-break
    /// partition.
    pub fn sup_f(&self, l: usize) -> Result<SupF> {
        if l == 0 {
            return Err(Error::arg("sup-F needs at least one break"));
        }
        let p = self.partition(l)?;
        Ok(SupF {
            statistic: (self.ssne0() - p.ssne) / (l * self.nu()) as f64,
            breaks: p.breaks,
        })
    }

    /// UDmax and WDmax over `1..=max_l` breaks.
    pub fn dmax(&self, max_l: usize, alpha: f64, table: &CriticalValueTable) -> Result<(f64, f64)> {
        if max_l == 0 {
            return Err(Error::arg("Dmax tests need L >= 1"));
        }
        let weights = table.wdmax_weights(self.nu(), self.epsilon, alpha, max_l)?;
        let mut ud = f64::MIN;
        let mut wd = f64::MIN;
        for l in 1..=max_l {
            let f = self.sup_f(l)?.statistic;
            ud = ud.max(f);
            wd = wd.max(weights[l - 1] * f);
        }
        Ok((ud, wd))
    }

    /// `F(l | l+1)`: reduction in SSNE from the best single break added to
    /// the optimal `l`-break partition, existing breaks held fixed.
    pub fn sequential(&self, l: usize) -> Result<f64> {
        let p = self.partition(l)?;
        let next = self.search.best_insertion(&p)?.ok_or_else(|| {
            Error::arg(format!("no admissible insertion for a break beyond {l}"))
        })?;
        Ok((p.ssne - next.ssne).max(0.0))
    }

    /// Number of breaks: zero unless a Dmax test rejects at `alpha`, else the
    /// smallest `l >= 1` whose sequential test fails to reject, capped at `max_l`.
    pub fn decide(&self, max_l: usize, alpha: f64, table: &CriticalValueTable) -> Result<usize> {
        if max_l == 0 {
            return Ok(0);
        }
        let nu = self.nu();
        let (ud, wd) = self.dmax(max_l, alpha, table)?;
        let c_ud = table.value(TestFamily::UDmax, nu, self.epsilon, alpha, max_l)?;
        let c_wd = table.value(TestFamily::WDmax, nu, self.epsilon, alpha, max_l)?;
        if ud < c_ud && wd < c_wd {
            return Ok(0);
        }
        for l in 1..max_l {
            let stat = match self.sequential(l) {
                Ok(s) => s,
                // no room for another break
                Err(_) => return Ok(l),
            };
            let c = table.value(TestFamily::Sequential, nu, self.epsilon, alpha, l)?;
            if stat < c {
                return Ok(l);
            }
        }
        Ok(max_l)
    }
}
