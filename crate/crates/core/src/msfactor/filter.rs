use nalgebra::DMatrix;

use super::transition::TransitionMatrix;
use crate::{Error, Result};

/// Filtered regime probabilities and the log-likelihood of the sample.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterOutput {
    /// `T x M`, row `t` is `Pr(S_t = j | x_1..x_t)`.
    pub filtered: DMatrix<f64>,
    pub loglik: f64,
}

const PRED_FLOOR: f64 = 1e-300;

fn check_initial(initial: &[f64], m: usize) -> Result<()> {
    if initial.len() != m {
        return Err(Error::arg(format!("initial distribution has {} entries, expected {m}", initial.len())));
    }
    let s: f64 = initial.iter().sum();
    if initial.iter().any(|p| !(*p >= 0.0)) || (s - 1.0).abs() > 1e-8 {
        return Err(Error::arg("initial distribution is not a probability vector"));
    }
    Ok(())
}

fn predict(p: &TransitionMatrix, prev: &[f64], out: &mut [f64]) {
    let m = prev.len();
    for (j, o) in out.iter_mut().enumerate() {
        *o = (0..m).map(|i| prev[i] * p.get(i, j)).sum();
    }
}

/// Forward recursion on per-regime densities (not logs).
pub fn hamilton_filter(densities: &DMatrix<f64>, p: &TransitionMatrix, initial: &[f64]) -> Result<FilterOutput> {
    for (t, row) in densities.row_iter().enumerate() {
        if row.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
            return Err(Error::arg(format!("density row {} has negative or non-finite entries", t + 1)));
        }
        if row.iter().all(|d| *d == 0.0) {
            return Err(Error::numerical(format!(
                "all regime densities underflow to zero at period {}",
                t + 1
            )));
        }
    }
    hamilton_filter_log(&densities.map(f64::ln), p, initial)
}

/// Forward recursion on log densities, normalizing each step in log space.
pub fn hamilton_filter_log(log_dens: &DMatrix<f64>, p: &TransitionMatrix, initial: &[f64]) -> Result<FilterOutput> {
    let (t_len, m) = log_dens.shape();
    if m != p.n_regimes() {
        return Err(Error::arg("density columns differ from the number of regimes"));
    }
    check_initial(initial, m)?;
    let mut filtered = DMatrix::zeros(t_len, m);
    let mut prev = initial.to_vec();
    let mut pred = vec![0.0; m];
    let mut joint = vec![0.0; m];
    let mut loglik = 0.0;
    for t in 0..t_len {
        if t == 0 {
            pred.copy_from_slice(initial);
        } else {
            predict(p, &prev, &mut pred);
        }
        for j in 0..m {
            let ld = log_dens[(t, j)];
            if ld.is_nan() || ld == f64::INFINITY {
                return Err(Error::numerical(format!("invalid log density at period {}", t + 1)));
            }
            joint[j] = pred[j].ln() + ld;
        }
        let c = joint.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if c == f64::NEG_INFINITY {
            return Err(Error::numerical(format!(
                "no regime has positive probability at period {}",
                t + 1
            )));
        }
        let mut s = 0.0;
        for j in 0..m {
            joint[j] = (joint[j] - c).exp();
            s += joint[j];
        }
        loglik += c + s.ln();
        for j in 0..m {
            prev[j] = joint[j] / s;
            filtered[(t, j)] = prev[j];
        }
    }
    Ok(FilterOutput { filtered, loglik })
}

/// Backward smoothing pass; returns `Pr(S_t = j | x_1..x_T)`.
pub fn kim_smoother(filtered: &DMatrix<f64>, p: &TransitionMatrix) -> Result<DMatrix<f64>> {
    kim_smoother_pairwise(filtered, p).map(|(s, _)| s)
}

/// Smoothed marginals plus the summed smoothed transition probabilities
/// `sum_t Pr(S_t = i, S_{t+1} = j | x_1..x_T)`.
pub fn kim_smoother_pairwise(filtered: &DMatrix<f64>, p: &TransitionMatrix) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let (t_len, m) = filtered.shape();
    if m != p.n_regimes() {
        return Err(Error::arg("filtered columns differ from the number of regimes"));
    }
    let mut smoothed = DMatrix::zeros(t_len, m);
    let mut pair = DMatrix::zeros(m, m);
    if t_len == 0 {
        return Ok((smoothed, pair));
    }
    smoothed.row_mut(t_len - 1).copy_from(&filtered.row(t_len - 1));
    let mut pred = vec![0.0; m];
    let mut ratio = vec![0.0; m];
    for t in (0..t_len - 1).rev() {
        let filt: Vec<f64> = filtered.row(t).iter().copied().collect();
        predict(p, &filt, &mut pred);
        for j in 0..m {
            ratio[j] = smoothed[(t + 1, j)] / pred[j].max(PRED_FLOOR);
        }
        let mut total = 0.0;
        for i in 0..m {
            let mut acc = 0.0;
            for j in 0..m {
                let xi = filt[i] * p.get(i, j) * ratio[j];
                pair[(i, j)] += xi;
                acc += xi;
            }
            smoothed[(t, i)] = acc;
            total += acc;
        }
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::numerical(format!("smoother degenerated at period {}", t + 1)));
        }
        for i in 0..m {
            smoothed[(t, i)] /= total;
        }
    }
    Ok((smoothed, pair))
}
