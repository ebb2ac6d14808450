use nalgebra::DMatrix;

use super::moments::LongRunCov;
use crate::exec::Execution;
use crate::linalg::all_finite;
use crate::{Error, Result};

/// The SSNE objective: sum over segments of the `Omega^{-1}`-weighted squared
/// deviations of the moment series from its segment means.
///
/// Moments are whitened once (`y_t = G^{-1} z_t` with `Omega = G G'`) so a
/// segment cost is an ordinary sum of squared deviations, evaluated in
/// `O(nu)` from prefix sums.
#[derive(Clone, Debug)]
pub struct SsneObjective {
    t: usize,
    nu: usize,
    prefix: Vec<f64>,
    prefix_sq: Vec<f64>,
}

impl SsneObjective {
    /// Builds the objective from a `T x nu` moment series and a long-run
    /// covariance.
    pub fn new(moments: &DMatrix<f64>, omega: &LongRunCov) -> Result<Self> {
        let nu = moments.ncols();
        if omega.omega.shape() != (nu, nu) {
            return Err(Error::arg("long-run covariance does not match moment dimension"));
        }
        let chol = omega
            .omega
            .clone()
            .cholesky()
            .ok_or_else(|| Error::numerical("long-run covariance is not positive definite"))?;
        let g = chol.l();
        // rows of Y are (G^{-1} z_t)'
        let y = g
            .solve_lower_triangular(&moments.transpose())
            .ok_or_else(|| Error::numerical("long-run covariance factor is singular"))?
            .transpose();
        Self::from_whitened(&y)
    }

    /// Objective for moments already expressed in whitened coordinates
    /// (identity weighting).
    pub fn from_whitened(y: &DMatrix<f64>) -> Result<Self> {
        let (t, nu) = y.shape();
        if t == 0 || nu == 0 {
            return Err(Error::arg("empty moment series"));
        }
        if !all_finite(y) {
            return Err(Error::input("moment series contains non-finite values"));
        }
        let mut prefix = vec![0.0; (t + 1) * nu];
        let mut prefix_sq = vec![0.0; t + 1];
        for r in 0..t {
            let mut sq = 0.0;
            for k in 0..nu {
                let v = y[(r, k)];
                prefix[(r + 1) * nu + k] = prefix[r * nu + k] + v;
                sq += v * v;
            }
            prefix_sq[r + 1] = prefix_sq[r] + sq;
        }
        Ok(Self {
            t,
            nu,
            prefix,
            prefix_sq,
        })
    }

    pub fn len(&self) -> usize {
        self.t
    }

    pub fn is_empty(&self) -> bool {
        self.t == 0
    }

    pub fn nu(&self) -> usize {
        self.nu
    }

    /// Cost of the segment covering rows `a..b` (half-open).
    pub fn segment_cost(&self, a: usize, b: usize) -> f64 {
        debug_assert!(a < b && b <= self.t);
        let n = (b - a) as f64;
        let mut cross = 0.0;
        for k in 0..self.nu {
            let s = self.prefix[b * self.nu + k] - self.prefix[a * self.nu + k];
            cross += s * s;
        }
        (self.prefix_sq[b] - self.prefix_sq[a] - cross / n).max(0.0)
    }

    /// SSNE with no breaks (full-sample demeaning).
    pub fn ssne0(&self) -> f64 {
        self.segment_cost(0, self.t)
    }

    /// SSNE for the given break indices (1-based last observations of each
    /// regime but the final one). Every segment must hold at least `nu`
    /// observations.
    pub fn ssne(&self, breaks: &[usize]) -> Result<f64> {
        let bounds = segment_bounds(breaks, self.t)?;
        let mut total = 0.0;
        for w in bounds.windows(2) {
            if w[1] - w[0] < self.nu {
                return Err(Error::arg(format!(
                    "segment ({}, {}] is shorter than nu = {}",
                    w[0], w[1], self.nu
                )));
            }
            total += self.segment_cost(w[0], w[1]);
        }
        Ok(total)
    }
}

/// `[0, b_1, ..., b_m, T]` after validating the break list.
pub(crate) fn segment_bounds(breaks: &[usize], t: usize) -> Result<Vec<usize>> {
    let mut bounds = Vec::with_capacity(breaks.len() + 2);
    bounds.push(0);
    for &b in breaks {
        if b <= *bounds.last().unwrap() || b >= t {
            return Err(Error::arg(format!(
                "break indices {breaks:?} must be strictly increasing inside (0, {t})"
            )));
        }
        bounds.push(b);
    }
    bounds.push(t);
    Ok(bounds)
}

/// Minimum admissible segment length: `floor(eps * T)`, but at least `nu`.
pub fn min_segment_length(epsilon: f64, t: usize, nu: usize) -> usize {
    ((epsilon * t as f64 + 1e-9).floor() as usize).max(nu).max(1)
}

/// A set of break indices with its objective value.
#[derive(Clone, Debug, PartialEq)]
pub struct Partition {
    pub breaks: Vec<usize>,
    pub ssne: f64,
}

/// Dynamic-programming search for globally optimal partitions.
///
/// Segment costs for every admissible `(start, end)` pair are tabulated up
/// front; rows of the table are independent and may be filled in parallel.
pub struct BreakSearch<'a> {
    objective: &'a SsneObjective,
    h: usize,
    t: usize,
    costs: Vec<f64>,
}

impl<'a> BreakSearch<'a> {
    pub fn new(objective: &'a SsneObjective, min_length: usize, exec: Execution) -> Result<Self> {
        let t = objective.len();
        if min_length == 0 || min_length > t {
            return Err(Error::arg(format!(
                "minimum segment length {min_length} invalid for T = {t}"
            )));
        }
        let h = min_length;
        let rows = exec.map(t + 1, |a| {
            let mut row = vec![f64::NAN; t + 1];
            for (b, slot) in row.iter_mut().enumerate().skip(a + h) {
                *slot = objective.segment_cost(a, b);
            }
            row
        });
        Ok(Self {
            objective,
            h,
            t,
            costs: rows.concat(),
        })
    }

    pub fn min_length(&self) -> usize {
        self.h
    }

    pub fn objective(&self) -> &SsneObjective {
        self.objective
    }

    #[inline]
    fn cost(&self, a: usize, b: usize) -> f64 {
        self.costs[a * (self.t + 1) + b]
    }

    /// Largest break count admitted by the minimum segment length.
    pub fn max_feasible_breaks(&self) -> usize {
        self.t / self.h - 1
    }

    /// Optimal partitions for every break count `0..=max_breaks` (entries are
    /// `None` where `(m + 1) * h > T`). Ties go to the earliest break dates.
    pub fn optimal_partitions(&self, max_breaks: usize) -> Vec<Option<Partition>> {
        let (t, h) = (self.t, self.h);
        let segs = max_breaks + 1;
        // value[k][j]: best cost of splitting rows 0..j into k+1 segments
        let mut value = vec![vec![f64::INFINITY; t + 1]; segs];
        let mut back = vec![vec![usize::MAX; t + 1]; segs];
        for j in h..=t {
            value[0][j] = self.cost(0, j);
        }
        for k in 1..segs {
            for j in ((k + 1) * h)..=t {
                let mut best = f64::INFINITY;
                let mut arg = usize::MAX;
                for i in (k * h)..=(j - h) {
                    let prev = value[k - 1][i];
                    if !prev.is_finite() {
                        continue;
                    }
                    let v = prev + self.cost(i, j);
                    if v < best {
                        best = v;
                        arg = i;
                    }
                }
                value[k][j] = best;
                back[k][j] = arg;
            }
        }
        (0..segs)
            .map(|k| {
                if !value[k][t].is_finite() {
                    return None;
                }
                let mut breaks = Vec::with_capacity(k);
                let mut j = t;
                for kk in (1..=k).rev() {
                    j = back[kk][j];
                    breaks.push(j);
                }
                breaks.reverse();
                Some(Partition {
                    breaks,
                    ssne: value[k][t],
                })
            })
            .collect()
    }

    /// Globally optimal partition with exactly `m` breaks.
    pub fn optimal(&self, m: usize) -> Result<Partition> {
        if (m + 1) * self.h > self.t {
            return Err(Error::arg(format!(
                "{m} breaks with minimum segment length {} do not fit in T = {}",
                self.h, self.t
            )));
        }
        Ok(self.optimal_partitions(m).pop().flatten().expect("feasible partition"))
    }

    /// Best single break added inside one of the segments of `partition`,
    /// keeping the existing breaks fixed. Returns `None` when no segment is
    /// long enough to be split.
    pub fn best_insertion(&self, partition: &Partition) -> Result<Option<Partition>> {
        let bounds = segment_bounds(&partition.breaks, self.t)?;
        let mut best: Option<(f64, usize)> = None;
        for w in bounds.windows(2) {
            let (a, b) = (w[0], w[1]);
            if b - a < 2 * self.h {
                continue;
            }
            let base = self.cost(a, b);
            for tau in (a + self.h)..=(b - self.h) {
                let delta = self.cost(a, tau) + self.cost(tau, b) - base;
                if best.map_or(true, |(d, _)| delta < d) {
                    best = Some((delta, tau));
                }
            }
        }
        Ok(best.map(|(delta, tau)| {
            let mut breaks = partition.breaks.clone();
            let pos = breaks.partition_point(|&b| b < tau);
            breaks.insert(pos, tau);
            Partition {
                breaks,
                ssne: partition.ssne + delta,
            }
        }))
    }
}
