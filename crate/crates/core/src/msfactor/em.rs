use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::filter::{hamilton_filter_log, kim_smoother_pairwise};
use super::transition::{ergodic_probs, TransitionMatrix};
use crate::breaks::{dp_break_search, objective_for};
use crate::exec::Execution;
use crate::factor::estimate_factors;
use crate::linalg::{all_finite, sorted_sym_eigen};
use crate::panel::YearMonth;
use crate::{Error, Result};

const NOISE_FLOOR: f64 = 1e-4;
const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// EM settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmOptions {
    pub max_iter: usize,
    /// Stop once the log-likelihood gain falls below `tol * (1 + |loglik|)`.
    pub tol: f64,
    /// Random contiguous segmentations used as starts.
    pub n_starts: usize,
    pub seed: u64,
    /// Add a start seeded by the optimal break partition of the PCA factor.
    pub break_start: bool,
}

impl Default for EmOptions {
    fn default() -> Self {
        Self {
            max_iter: 500,
            tol: 1e-8,
            n_starts: 10,
            seed: 1,
            break_start: true,
        }
    }
}

/// Parameters of the switching model.
#[derive(Clone, Debug, PartialEq)]
pub struct MsParams {
    /// Per-regime `N x r` loadings of the observation density.
    pub loadings: Vec<DMatrix<f64>>,
    /// Diagonal of the idiosyncratic covariance, shared by all regimes.
    pub idio_var: Vec<f64>,
    pub transition: TransitionMatrix,
}

impl MsParams {
    pub fn n_regimes(&self) -> usize {
        self.loadings.len()
    }

    /// `T x M` matrix of `log N(x_t; 0, Lambda_j Lambda_j' + Sigma_e)`,
    /// using the determinant lemma and Woodbury so each row costs `O(N r^2)`.
    pub fn log_densities(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let (t_len, n) = x.shape();
        if self.idio_var.len() != n {
            return Err(Error::arg("idiosyncratic variances do not match the panel width"));
        }
        let m = self.n_regimes();
        let inv_d: Vec<f64> = self.idio_var.iter().map(|d| 1.0 / d).collect();
        let logdet_d: f64 = self.idio_var.iter().map(|d| d.ln()).sum();
        let quad_d: Vec<f64> = x
            .row_iter()
            .map(|row| row.iter().zip(&inv_d).map(|(v, w)| v * v * w).sum())
            .collect();
        let mut out = DMatrix::zeros(t_len, m);
        for j in 0..m {
            let l = &self.loadings[j];
            let r = l.ncols();
            let dl = DMatrix::from_fn(n, r, |i, k| l[(i, k)] * inv_d[i]);
            let inner = DMatrix::<f64>::identity(r, r) + l.transpose() * &dl;
            let chol = inner
                .cholesky()
                .ok_or_else(|| Error::numerical(format!("regime {} covariance is not positive definite", j + 1)))?;
            let logdet = logdet_d + 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
            let proj = x * &dl;
            for t in 0..t_len {
                let u = proj.row(t).transpose();
                let w = chol.l().solve_lower_triangular(&u).unwrap_or_else(|| DVector::zeros(r));
                let quad = quad_d[t] - w.norm_squared();
                out[(t, j)] = -0.5 * (n as f64 * LN_2PI + logdet + quad);
            }
        }
        Ok(out)
    }

    /// Common variance per series and factor, `||Lambda_j||^2 / (N r)`.
    pub fn factor_variances(&self) -> Vec<f64> {
        self.loadings
            .iter()
            .map(|l| l.norm_squared() / (l.nrows() * l.ncols()) as f64)
            .collect()
    }

    fn permuted(&self, perm: &[usize]) -> Self {
        Self {
            loadings: perm.iter().map(|&k| self.loadings[k].clone()).collect(),
            idio_var: self.idio_var.clone(),
            transition: self.transition.permuted(perm),
        }
    }
}

/// Weighted second-moment matrix `sum_t w_t x_t x_t' / sum_t w_t` and the
/// total weight.
fn weighted_moment(x: &DMatrix<f64>, weights: &[f64]) -> (DMatrix<f64>, f64) {
    let total: f64 = weights.iter().sum();
    let mut xw = x.clone();
    for (t, mut row) in xw.row_iter_mut().enumerate() {
        row *= weights[t].sqrt();
    }
    (xw.transpose() * &xw / total, total)
}

fn sign_by_sum(mut l: DMatrix<f64>) -> DMatrix<f64> {
    for mut col in l.column_iter_mut() {
        if col.sum() < 0.0 {
            col.neg_mut();
        }
    }
    l
}

/// Loadings maximizing `-(log|C| + tr(C^{-1} S))` over `C = L L' + D` for a
/// fixed diagonal `D`: `L = D^{1/2} U (E - I)_+^{1/2}` from the eigenpairs of
/// `D^{-1/2} S D^{-1/2}`.
fn loadings_given_noise(s: &DMatrix<f64>, d: &[f64], r: usize) -> DMatrix<f64> {
    let n = s.nrows();
    let sd: Vec<f64> = d.iter().map(|v| v.sqrt()).collect();
    let scaled = DMatrix::from_fn(n, n, |i, k| s[(i, k)] / (sd[i] * sd[k]));
    let (vals, vecs) = sorted_sym_eigen(&scaled);
    let l = DMatrix::from_fn(n, r, |i, k| sd[i] * vecs[(i, k)] * (vals[k] - 1.0).max(0.0).sqrt());
    sign_by_sum(l)
}

/// One latent-factor EM update of the shared diagonal noise with the
/// loadings held fixed.
fn update_noise(moments: &[(DMatrix<f64>, f64)], loadings: &[DMatrix<f64>], d: &[f64]) -> Vec<f64> {
    let n = d.len();
    let total: f64 = moments.iter().map(|(_, w)| w).sum();
    let mut acc = vec![0.0; n];
    for ((s, w), l) in moments.iter().zip(loadings) {
        let r = l.ncols();
        // beta = (I + L'D^{-1}L)^{-1} L'D^{-1}, the posterior-mean map of f given x
        let dl = DMatrix::from_fn(n, r, |i, k| l[(i, k)] / d[i]);
        let inner = DMatrix::<f64>::identity(r, r) + l.transpose() * &dl;
        let inv = inner.try_inverse().unwrap_or_else(|| DMatrix::identity(r, r));
        let beta = &inv * dl.transpose();
        let beta_s = &beta * s;
        let eff = DMatrix::<f64>::identity(r, r) - &beta * l + &beta_s * beta.transpose();
        let l_beta_s = l * &beta_s;
        let l_eff = l * eff;
        for i in 0..n {
            let cross = l_beta_s[(i, i)];
            let second: f64 = (0..r).map(|k| l_eff[(i, k)] * l[(i, k)]).sum();
            acc[i] += w * (s[(i, i)] - 2.0 * cross + second);
        }
    }
    acc.into_iter().map(|v| (v / total).max(NOISE_FLOOR)).collect()
}

fn q_transition(counts: &DMatrix<f64>, gamma1: &[f64], p: &TransitionMatrix) -> Option<f64> {
    let m = p.n_regimes();
    let pi = ergodic_probs(p).ok()?;
    let mut q = 0.0;
    for i in 0..m {
        for j in 0..m {
            if counts[(i, j)] > 0.0 {
                q += counts[(i, j)] * p.get(i, j).ln();
            }
        }
        if gamma1[i] > 0.0 {
            q += gamma1[i] * pi[i].max(0.0).ln();
        }
    }
    q.is_finite().then_some(q)
}

/// Transition update: the count-normalized maximizer, pulled back toward the
/// current matrix when the ergodic initial term would make it worse.
fn update_transition(counts: &DMatrix<f64>, gamma1: &[f64], old: &TransitionMatrix) -> TransitionMatrix {
    let m = old.n_regimes();
    let target: Vec<Vec<f64>> = (0..m)
        .map(|i| {
            let s: f64 = counts.row(i).sum();
            if s > 0.0 {
                (0..m).map(|j| counts[(i, j)] / s).collect()
            } else {
                old.row(i).to_vec()
            }
        })
        .collect();
    let Some(q_old) = q_transition(counts, gamma1, old) else {
        return TransitionMatrix::normalized(target);
    };
    let mut step = 1.0;
    for _ in 0..40 {
        let rows = (0..m)
            .map(|i| (0..m).map(|j| old.get(i, j) + step * (target[i][j] - old.get(i, j))).collect())
            .collect();
        let cand = TransitionMatrix::normalized(rows);
        if let Some(q) = q_transition(counts, gamma1, &cand) {
            if q >= q_old {
                return cand;
            }
        }
        step *= 0.5;
    }
    old.clone()
}

#[derive(Clone, Debug)]
struct EStep {
    filtered: DMatrix<f64>,
    smoothed: DMatrix<f64>,
    counts: DMatrix<f64>,
    loglik: f64,
}

fn e_step(x: &DMatrix<f64>, params: &MsParams) -> Result<EStep> {
    let ld = params.log_densities(x)?;
    let init = ergodic_probs(&params.transition)?;
    let f = hamilton_filter_log(&ld, &params.transition, &init)?;
    let (smoothed, counts) = kim_smoother_pairwise(&f.filtered, &params.transition)?;
    Ok(EStep {
        filtered: f.filtered,
        smoothed,
        counts,
        loglik: f.loglik,
    })
}

fn m_step(x: &DMatrix<f64>, e: &EStep, old: &MsParams, r: usize) -> Result<MsParams> {
    let m = old.n_regimes();
    let mut moments = Vec::with_capacity(m);
    for j in 0..m {
        let w: Vec<f64> = e.smoothed.column(j).iter().copied().collect();
        let (s, occ) = weighted_moment(x, &w);
        if occ < (r + 2) as f64 {
            return Err(Error::numerical(format!(
                "regime {} is degenerate (expected occupancy {occ:.2})",
                j + 1
            )));
        }
        moments.push((s, occ));
    }
    let loadings: Vec<DMatrix<f64>> = moments
        .iter()
        .map(|(s, _)| loadings_given_noise(s, &old.idio_var, r))
        .collect();
    let idio_var = update_noise(&moments, &loadings, &old.idio_var);
    let gamma1: Vec<f64> = e.smoothed.row(0).iter().copied().collect();
    let transition = update_transition(&e.counts, &gamma1, &old.transition);
    Ok(MsParams {
        loadings,
        idio_var,
        transition,
    })
}

/// Parameters implied by a hard regime assignment: per-regime principal
/// components give the starting noise, then loadings are refit given it.
fn params_from_labels(x: &DMatrix<f64>, labels: &[usize], m: usize, r: usize) -> Result<MsParams> {
    let n = x.ncols();
    let mut moments = Vec::with_capacity(m);
    for j in 0..m {
        let w: Vec<f64> = labels.iter().map(|&s| if s == j { 1.0 } else { 0.0 }).collect();
        let (s, occ) = weighted_moment(x, &w);
        if occ < (r + 2) as f64 {
            return Err(Error::numerical(format!("start leaves regime {} nearly empty", j + 1)));
        }
        moments.push((s, occ));
    }
    let total = labels.len() as f64;
    let mut d = vec![0.0; n];
    for (s, occ) in &moments {
        let (vals, vecs) = sorted_sym_eigen(s);
        for i in 0..n {
            let common: f64 = (0..r).map(|k| vals[k].max(0.0) * vecs[(i, k)].powi(2)).sum();
            d[i] += occ / total * (s[(i, i)] - common);
        }
    }
    let d: Vec<f64> = d.into_iter().map(|v| v.max(NOISE_FLOOR)).collect();
    let loadings = moments.iter().map(|(s, _)| loadings_given_noise(s, &d, r)).collect();
    // half-count smoothing keeps every transition possible at the start
    let mut counts = vec![vec![0.5; m]; m];
    for w in labels.windows(2) {
        counts[w[0]][w[1]] += 1.0;
    }
    Ok(MsParams {
        loadings,
        idio_var: d,
        transition: TransitionMatrix::normalized(counts),
    })
}

fn random_segmentation(rng: &mut ChaCha8Rng, t_len: usize, m: usize, min_len: usize) -> Option<Vec<usize>> {
    let max_k = (t_len / min_len).min(2 * m);
    if max_k < m {
        return None;
    }
    let k = rng.random_range(m..=max_k);
    let slack = t_len - k * min_len;
    let mut offsets: Vec<usize> = (0..k - 1).map(|_| rng.random_range(0..=slack)).collect();
    offsets.sort_unstable();
    let mut labels_by_seg: Vec<usize> = (0..m).chain((m..k).map(|_| rng.random_range(0..m))).collect();
    labels_by_seg.shuffle(rng);
    let mut path = Vec::with_capacity(t_len);
    let mut start = 0;
    for seg in 0..k {
        let end = if seg + 1 < k { offsets[seg] + (seg + 1) * min_len } else { t_len };
        path.extend(std::iter::repeat_n(labels_by_seg[seg], end - start));
        start = end;
    }
    Some(path)
}

fn break_labels(x: &DMatrix<f64>, m: usize, r: usize) -> Result<Vec<usize>> {
    let full = estimate_factors(x, r)?;
    let (_, omega) = objective_for(&full.factors, None)?;
    let part = dp_break_search(&full.factors, m - 1, 0.05, &omega)?;
    let mut path = vec![0; x.nrows()];
    let mut prev = 0;
    for (k, &b) in part.breaks.iter().chain(std::iter::once(&x.nrows())).enumerate() {
        path[prev..b].fill(k);
        prev = b;
    }
    Ok(path)
}

/// Result of running EM from one set of starting parameters.
#[derive(Clone, Debug)]
struct EmRun {
    params: MsParams,
    e: EStep,
    loglik_path: Vec<f64>,
    converged: bool,
}

fn run_em(x: &DMatrix<f64>, mut params: MsParams, r: usize, opts: &EmOptions) -> Result<EmRun> {
    let mut path = Vec::new();
    let mut e = e_step(x, &params)?;
    path.push(e.loglik);
    let mut converged = false;
    for _ in 0..opts.max_iter {
        let next = m_step(x, &e, &params, r)?;
        let e_next = e_step(x, &next)?;
        let gain = e_next.loglik - e.loglik;
        params = next;
        e = e_next;
        path.push(e.loglik);
        if gain.abs() <= opts.tol * (1.0 + e.loglik.abs()) {
            converged = true;
            break;
        }
    }
    Ok(EmRun {
        params,
        e,
        loglik_path: path,
        converged,
    })
}

/// A fitted Markov-switching factor model, regimes ordered by increasing
/// factor variance.
#[derive(Clone, Debug)]
pub struct MsModel {
    pub params: MsParams,
    pub r: usize,
    /// `||Lambda_j||^2 / (N r)` per regime; the ordering key.
    pub factor_var: Vec<f64>,
    pub ergodic: Vec<f64>,
    pub filtered_probs: DMatrix<f64>,
    pub smoothed_probs: DMatrix<f64>,
    /// Per-regime principal-component loadings `U_j E_j^{1/2}` of the
    /// smoothed-probability-weighted second moments; factors are read off these.
    pub factor_loadings: Vec<DMatrix<f64>>,
    /// `T x M`: first factor of every period projected on each regime's factor loadings.
    pub regime_factor_paths: DMatrix<f64>,
    /// Argmax smoothed regime of every period.
    pub regimes: Vec<usize>,
    /// Factor path under the argmax regime.
    pub regime_factors: Vec<f64>,
    pub loglik: f64,
    /// Log-likelihood after every EM iteration of the selected start.
    pub loglik_path: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// Index of the winning start; the break-based start is last.
    pub best_start: usize,
}

impl MsModel {
    pub fn n_regimes(&self) -> usize {
        self.params.n_regimes()
    }

    /// Common component `Lambda_{s_t} f_t` of every period under its argmax regime.
    pub fn common_component(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let mut out = DMatrix::zeros(x.nrows(), x.ncols());
        for t in 0..x.nrows() {
            let l = &self.factor_loadings[self.regimes[t]];
            let f = crate::factor::project_factor(l, &x.row(t).transpose())?;
            out.set_row(t, &(l * f).transpose());
        }
        Ok(out)
    }

    /// Relabels regimes so that new regime `k` is old regime `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let m = self.n_regimes();
        let mut sorted = perm.to_vec();
        sorted.sort_unstable();
        if sorted != (0..m).collect::<Vec<_>>() {
            return Err(Error::arg("not a permutation of the regimes"));
        }
        let mut inverse = vec![0; m];
        for (k, &old) in perm.iter().enumerate() {
            inverse[old] = k;
        }
        let cols = |a: &DMatrix<f64>| DMatrix::from_fn(a.nrows(), m, |t, k| a[(t, perm[k])]);
        Ok(Self {
            params: self.params.permuted(perm),
            factor_loadings: perm.iter().map(|&k| self.factor_loadings[k].clone()).collect(),
            r: self.r,
            factor_var: perm.iter().map(|&k| self.factor_var[k]).collect(),
            ergodic: perm.iter().map(|&k| self.ergodic[k]).collect(),
            filtered_probs: cols(&self.filtered_probs),
            smoothed_probs: cols(&self.smoothed_probs),
            regime_factor_paths: cols(&self.regime_factor_paths),
            regimes: self.regimes.iter().map(|&s| inverse[s]).collect(),
            regime_factors: self.regime_factors.clone(),
            loglik: self.loglik,
            loglik_path: self.loglik_path.clone(),
            converged: self.converged,
            iterations: self.iterations,
            best_start: self.best_start,
        })
    }

    pub fn report(&self) -> MsModelReport {
        let rows = |a: &DMatrix<f64>| a.row_iter().map(|r| r.iter().copied().collect()).collect();
        MsModelReport {
            regimes: self.n_regimes(),
            r: self.r,
            loadings: self
                .params
                .loadings
                .iter()
                .map(|l| l.column(0).iter().copied().collect())
                .collect(),
            factor_loadings: self
                .factor_loadings
                .iter()
                .map(|l| l.column(0).iter().copied().collect())
                .collect(),
            idio_var: self.params.idio_var.clone(),
            factor_var: self.factor_var.clone(),
            transition: self.params.transition.clone(),
            ergodic: self.ergodic.clone(),
            filtered_probs: rows(&self.filtered_probs),
            smoothed_probs: rows(&self.smoothed_probs),
            regime_path: self.regimes.clone(),
            regime_factors: self.regime_factors.clone(),
            loglik: self.loglik,
            loglik_path: self.loglik_path.clone(),
            converged: self.converged,
            iterations: self.iterations,
            best_start: self.best_start,
        }
    }

    /// Plot-ready CSV: `date,prob_regime_1,...,prob_regime_M`.
    pub fn smoothed_csv(&self, dates: &[YearMonth]) -> Result<String> {
        if dates.len() != self.smoothed_probs.nrows() {
            return Err(Error::arg("date count differs from the fitted sample"));
        }
        let mut out = String::from("date");
        for j in 1..=self.n_regimes() {
            out.push_str(&format!(",prob_regime_{j}"));
        }
        out.push('\n');
        for (t, d) in dates.iter().enumerate() {
            out.push_str(&d.to_string());
            for p in self.smoothed_probs.row(t).iter() {
                out.push_str(&format!(",{p}"));
            }
            out.push('\n');
        }
        Ok(out)
    }
}

/// Serializable form of [`MsModel`]; loadings hold the first factor's column.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MsModelReport {
    pub regimes: usize,
    pub r: usize,
    pub loadings: Vec<Vec<f64>>,
    pub factor_loadings: Vec<Vec<f64>>,
    pub idio_var: Vec<f64>,
    pub factor_var: Vec<f64>,
    pub transition: TransitionMatrix,
    pub ergodic: Vec<f64>,
    pub filtered_probs: Vec<Vec<f64>>,
    pub smoothed_probs: Vec<Vec<f64>>,
    pub regime_path: Vec<usize>,
    pub regime_factors: Vec<f64>,
    pub loglik: f64,
    pub loglik_path: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub best_start: usize,
}

fn finish(x: &DMatrix<f64>, run: EmRun, r: usize, best_start: usize) -> Result<MsModel> {
    let m = run.params.n_regimes();
    let var = run.params.factor_variances();
    let mut perm: Vec<usize> = (0..m).collect();
    perm.sort_by(|&a, &b| var[a].total_cmp(&var[b]).then(a.cmp(&b)));
    let params = run.params.permuted(&perm);
    let cols = |a: &DMatrix<f64>| DMatrix::from_fn(a.nrows(), m, |t, k| a[(t, perm[k])]);
    let filtered_probs = cols(&run.e.filtered);
    let smoothed_probs = cols(&run.e.smoothed);

    let t_len = x.nrows();
    let mut paths = DMatrix::zeros(t_len, m);
    let mut factor_loadings = Vec::with_capacity(m);
    for j in 0..m {
        let w: Vec<f64> = smoothed_probs.column(j).iter().copied().collect();
        let (s, _) = weighted_moment(x, &w);
        let (vals, vecs) = sorted_sym_eigen(&s);
        if vals[r - 1] <= 0.0 {
            return Err(Error::numerical(format!("regime {} loadings are rank deficient", j + 1)));
        }
        let l = sign_by_sum(DMatrix::from_fn(x.ncols(), r, |i, k| vecs[(i, k)] * vals[k].sqrt()));
        let lead = l.column(0) / vals[0];
        for t in 0..t_len {
            paths[(t, j)] = x.row(t).transpose().dot(&lead);
        }
        factor_loadings.push(l);
    }
    let regimes: Vec<usize> = smoothed_probs
        .row_iter()
        .map(|row| {
            let mut best = 0;
            for j in 1..m {
                if row[j] > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect();
    let regime_factors = regimes.iter().enumerate().map(|(t, &j)| paths[(t, j)]).collect();
    let ergodic = ergodic_probs(&params.transition)?;
    Ok(MsModel {
        factor_var: params.factor_variances(),
        params,
        factor_loadings,
        r,
        ergodic,
        filtered_probs,
        smoothed_probs,
        regime_factor_paths: paths,
        regimes,
        regime_factors,
        loglik: run.e.loglik,
        iterations: run.loglik_path.len() - 1,
        loglik_path: run.loglik_path,
        converged: run.converged,
        best_start,
    })
}

fn check_input(x: &DMatrix<f64>, m: usize, r: usize) -> Result<()> {
    let (t_len, n) = x.shape();
    if m == 0 {
        return Err(Error::arg("at least one regime is required"));
    }
    if r == 0 || r >= n {
        return Err(Error::arg(format!("factor count {r} must lie in 1..{n}")));
    }
    if t_len < m * (r + 2) {
        return Err(Error::arg(format!("{t_len} periods cannot support {m} regimes with {r} factors")));
    }
    if !all_finite(x) {
        return Err(Error::input("panel contains non-finite values"));
    }
    Ok(())
}

/// Fits an `m`-regime model with `r` factors per regime by EM from several
/// starts and keeps the highest log-likelihood (ties to the lowest start).
///
/// Starts are `n_starts` random contiguous segmentations, each retried with a
/// fresh segmentation if it degenerates, plus one from the optimal
/// `m - 1`-break partition of the PCA factor.
pub fn em_fit(x: &DMatrix<f64>, m: usize, r: usize, opts: &EmOptions, exec: Execution) -> Result<MsModel> {
    check_input(x, m, r)?;
    if m == 1 {
        let params = params_from_labels(x, &vec![0; x.nrows()], 1, r)?;
        let run = run_em(x, params, r, opts)?;
        return finish(x, run, r, 0);
    }
    let t_len = x.nrows();
    let min_len = (r + 2).max(t_len / (4 * m)).max(3);
    let n_random = opts.n_starts;
    let with_break = opts.break_start;
    let total = n_random + usize::from(with_break);
    if total == 0 {
        return Err(Error::arg("at least one EM start is required"));
    }
    const RETRIES: u64 = 3;
    let runs: Vec<Result<EmRun>> = exec.map(total, |k| {
        if k == n_random {
            let labels = break_labels(x, m, r)?;
            return run_em(x, params_from_labels(x, &labels, m, r)?, r, opts);
        }
        let mut last = Error::numerical("no admissible random segmentation");
        for attempt in 0..RETRIES {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            rng.set_stream(k as u64 + attempt * total as u64);
            let Some(labels) = random_segmentation(&mut rng, t_len, m, min_len) else {
                break;
            };
            match params_from_labels(x, &labels, m, r).and_then(|p| run_em(x, p, r, opts)) {
                Ok(run) => return Ok(run),
                Err(e) if e.is_numerical() => last = e,
                Err(e) => return Err(e),
            }
        }
        Err(last)
    });
    let mut best: Option<(usize, EmRun)> = None;
    let mut last_err = None;
    for (k, run) in runs.into_iter().enumerate() {
        match run {
            Ok(run) => {
                if best.as_ref().is_none_or(|(_, b)| run.e.loglik > b.e.loglik) {
                    best = Some((k, run));
                }
            }
            Err(e) if e.is_numerical() => last_err = Some(e),
            Err(e) => return Err(e),
        }
    }
    match best {
        Some((k, run)) => finish(x, run, r, k),
        None => Err(last_err.unwrap_or_else(|| Error::numerical("every EM start failed"))),
    }
}

/// Runs EM from given parameters, e.g. a previous vintage's fit.
pub fn em_fit_from(x: &DMatrix<f64>, start: &MsParams, opts: &EmOptions) -> Result<MsModel> {
    let m = start.n_regimes();
    let r = start.loadings.first().map_or(0, |l| l.ncols());
    check_input(x, m, r)?;
    if start.loadings.iter().any(|l| l.nrows() != x.ncols()) {
        return Err(Error::arg("starting loadings do not match the panel width"));
    }
    let run = run_em(x, start.clone(), r, opts)?;
    finish(x, run, r, 0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::factor::estimate_factors;
    use crate::panel::{simulate_panel, standardize, DgpSpec, RegimeSpec};

    fn two_regime_spec(n: usize, t: usize) -> DgpSpec {
        DgpSpec {
            n,
            t,
            regimes: RegimeSpec::Markov {
                transition: vec![vec![0.95, 0.05], vec![0.05, 0.95]],
            },
            factor_var: vec![1.0, 4.0],
            loadings: None,
            loading_signs: Some(vec![1.0, -1.0]),
            noise_scale: 0.5,
            start: YearMonth::new(2000, 1).unwrap(),
        }
    }

    fn quick() -> EmOptions {
        EmOptions {
            n_starts: 3,
            max_iter: 200,
            ..Default::default()
        }
    }

    #[test]
    fn log_density_matches_dense_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 6;
        let l = DMatrix::from_fn(n, 2, |_, _| rng.random_range(-1.0..1.0));
        let params = MsParams {
            loadings: vec![l.clone()],
            idio_var: vec![0.3; n],
            transition: TransitionMatrix::identity(1),
        };
        let x = DMatrix::from_fn(4, n, |_, _| rng.random_range(-2.0..2.0));
        let ld = params.log_densities(&x).unwrap();
        let c = &l * l.transpose() + DMatrix::identity(n, n) * 0.3;
        let chol = c.clone().cholesky().unwrap();
        let logdet = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        for t in 0..4 {
            let xt = x.row(t).transpose();
            let quad = (xt.transpose() * chol.solve(&xt))[0];
            let dense = -0.5 * (n as f64 * LN_2PI + logdet + quad);
            assert!((ld[(t, 0)] - dense).abs() < 1e-10);
        }
    }

    #[test]
    fn single_regime_matches_pca_common_component() {
        let (p, _) = simulate_panel(&DgpSpec::no_break(12, 80), 4).unwrap();
        let x = standardize(&p, None).unwrap().values().clone();
        let fit = em_fit(&x, 1, 1, &EmOptions::default(), Execution::Sequential).unwrap();
        let pca = estimate_factors(&x, 1).unwrap();
        let diff = (fit.common_component(&x).unwrap() - pca.common_component()).amax();
        assert!(diff < 1e-6, "{diff}");
        assert!(fit.smoothed_probs.iter().all(|v| *v == 1.0));
        assert_eq!(fit.ergodic, vec![1.0]);
    }

    #[test]
    fn em_is_monotone_and_deterministic() {
        let (p, _) = simulate_panel(&two_regime_spec(10, 150), 9).unwrap();
        let x = standardize(&p, None).unwrap().values().clone();
        let a = em_fit(&x, 2, 1, &quick(), Execution::Parallel).unwrap();
        let b = em_fit(&x, 2, 1, &quick(), Execution::Sequential).unwrap();
        for w in a.loglik_path.windows(2) {
            assert!(w[1] >= w[0] - 1e-8, "{} -> {}", w[0], w[1]);
        }
        assert_eq!(a.loglik.to_bits(), b.loglik.to_bits());
        assert_eq!(a.regime_factors, b.regime_factors);
        assert!(a.factor_var[0] <= a.factor_var[1]);
        for row in a.smoothed_probs.row_iter().chain(a.filtered_probs.row_iter()) {
            assert!((row.sum() - 1.0).abs() < 1e-8);
        }
        let pi = DVector::from_vec(a.ergodic.clone());
        let check = pi.transpose() * a.params.transition.matrix();
        assert!((check.transpose() - &pi).amax() < 1e-8);
    }

    #[test]
    fn recovers_regimes_on_clear_dgp() {
        let (p, truth) = simulate_panel(&two_regime_spec(20, 400), 1).unwrap();
        let x = standardize(&p, None).unwrap().values().clone();
        let fit = em_fit(&x, 2, 1, &quick(), Execution::Parallel).unwrap();
        let hits = fit.regimes.iter().zip(&truth.regimes).filter(|(a, b)| a == b).count();
        let share = hits.max(400 - hits) as f64 / 400.0;
        assert!(share >= 0.9, "{share}");
    }

    #[test]
    fn permutation_leaves_fit_unchanged() {
        let (p, _) = simulate_panel(&two_regime_spec(10, 120), 3).unwrap();
        let x = standardize(&p, None).unwrap().values().clone();
        let fit = em_fit(&x, 2, 1, &quick(), Execution::Sequential).unwrap();
        let swapped = fit.permuted(&[1, 0]).unwrap();
        let ld = swapped.params.log_densities(&x).unwrap();
        let init = ergodic_probs(&swapped.params.transition).unwrap();
        let ll = hamilton_filter_log(&ld, &swapped.params.transition, &init).unwrap().loglik;
        assert!((ll - fit.loglik).abs() < 1e-8);
        let diff = (swapped.common_component(&x).unwrap() - fit.common_component(&x).unwrap()).amax();
        assert!(diff < 1e-12);
    }

    #[test]
    fn warm_start_does_not_lower_likelihood() {
        let (p, _) = simulate_panel(&two_regime_spec(10, 150), 6).unwrap();
        let x = standardize(&p, None).unwrap().values().clone();
        let fit = em_fit(&x, 2, 1, &quick(), Execution::Sequential).unwrap();
        let again = em_fit_from(&x, &fit.params, &quick()).unwrap();
        assert!(again.loglik >= fit.loglik - 1e-8);
    }

    #[test]
    fn transition_update_never_lowers_q() {
        let counts = DMatrix::from_row_slice(2, 2, &[50.0, 1.0, 1.0, 3.0]);
        let gamma1 = [0.0, 1.0];
        let old = TransitionMatrix::from_rows(&[vec![0.9, 0.1], vec![0.3, 0.7]]).unwrap();
        let new = update_transition(&counts, &gamma1, &old);
        assert!(q_transition(&counts, &gamma1, &new).unwrap() >= q_transition(&counts, &gamma1, &old).unwrap());
        for i in 0..2 {
            assert!((new.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let x = DMatrix::from_element(10, 4, 1.0);
        assert!(em_fit(&x, 0, 1, &quick(), Execution::Sequential).is_err());
        assert!(em_fit(&x, 2, 4, &quick(), Execution::Sequential).is_err());
        assert!(em_fit(&x, 4, 1, &quick(), Execution::Sequential).is_err());
    }

    #[test]
    fn smoothed_csv_layout() {
        let (p, _) = simulate_panel(&two_regime_spec(8, 60), 2).unwrap();
        let x = standardize(&p, None).unwrap().values().clone();
        let fit = em_fit(&x, 2, 1, &quick(), Execution::Sequential).unwrap();
        let csv = fit.smoothed_csv(p.dates()).unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "date,prob_regime_1,prob_regime_2");
        assert_eq!(lines.count(), 60);
        let json = serde_json::to_value(fit.report()).unwrap();
        assert_eq!(json["transition"].as_array().unwrap().len(), 2);
    }
}
