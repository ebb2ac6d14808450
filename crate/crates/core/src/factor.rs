//! Static principal-components factor estimation.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::linalg::{all_finite, sorted_sym_eigen};
use crate::{Error, Result};

/// Principal-components factors for one sample or one regime segment.
#[derive(Clone, Debug, PartialEq)]
pub struct FactorEstimate {
    /// `T_seg x r`, normalized so that `F'F / T_seg = I`.
    pub factors: DMatrix<f64>,
    /// `N x r`, equal to `X'F / T_seg`.
    pub loadings: DMatrix<f64>,
    /// Non-increasing eigenvalues of the second-moment matrix `X'X / T_seg`,
    /// the first `min(N, T_seg)` of them.
    pub eigenvalues: Vec<f64>,
    /// Half-open row range of the sample the factors were estimated on.
    pub segment: (usize, usize),
    pub r: usize,
    total_variance: f64,
}

impl FactorEstimate {
    /// The common component `F Lambda'`.
    pub fn common_component(&self) -> DMatrix<f64> {
        &self.factors * self.loadings.transpose()
    }

    /// Column `k` of the factor matrix as a vector.
    pub fn factor(&self, k: usize) -> Vec<f64> {
        self.factors.column(k).iter().copied().collect()
    }

    /// Share of total variance explained by the first `r` components.
    pub fn explained_share(&self) -> f64 {
        self.eigenvalues[..self.r].iter().sum::<f64>() / self.total_variance
    }

    /// Mean over periods of the squared residual norm: `tr(X'X)/T - sum lambda_k`.
    pub fn residual_variance(&self) -> f64 {
        self.total_variance - self.eigenvalues[..self.r].iter().sum::<f64>()
    }
}

/// Estimates `r` principal-component factors from a column-standardized
/// `T x N` matrix.
///
/// The eigenproblem is solved on whichever of `XX'` and `X'X` is smaller.
/// Each factor is signed so its loading vector has a non-negative sum.
pub fn estimate_factors(x: &DMatrix<f64>, r: usize) -> Result<FactorEstimate> {
    let (t, n) = x.shape();
    if r == 0 || r > n.min(t) {
        return Err(Error::arg(format!(
            "factor count {r} must lie in 1..={} for a {t}x{n} panel",
            n.min(t)
        )));
    }
    if !all_finite(x) {
        return Err(Error::input("panel contains non-finite entries"));
    }
    let tf = t as f64;
    let k = n.min(t);
    let mut factors = DMatrix::zeros(t, r);
    let mut loadings = DMatrix::zeros(n, r);
    let eigenvalues: Vec<f64>;

    if t < n {
        let (vals, vecs) = sorted_sym_eigen(&(x * x.transpose() / tf));
        eigenvalues = vals[..k].iter().map(|v| v.max(0.0)).collect();
        check_rank(&eigenvalues, r)?;
        for j in 0..r {
            factors.set_column(j, &(vecs.column(j) * tf.sqrt()));
        }
        loadings = x.transpose() * &factors / tf;
    } else {
        let (vals, vecs) = sorted_sym_eigen(&(x.transpose() * x / tf));
        eigenvalues = vals[..k].iter().map(|v| v.max(0.0)).collect();
        check_rank(&eigenvalues, r)?;
        for j in 0..r {
            let v = vecs.column(j);
            let f = x * v / eigenvalues[j].sqrt();
            factors.set_column(j, &f);
            loadings.set_column(j, &(v * eigenvalues[j].sqrt()));
        }
    }

    for j in 0..r {
        if loadings.column(j).sum() < 0.0 {
            factors.column_mut(j).neg_mut();
            loadings.column_mut(j).neg_mut();
        }
    }

    Ok(FactorEstimate {
        factors,
        loadings,
        eigenvalues,
        segment: (0, t),
        r,
        total_variance: x.norm_squared() / tf,
    })
}

fn check_rank(eigenvalues: &[f64], r: usize) -> Result<()> {
    let top = eigenvalues[0];
    if !(top > 0.0) || eigenvalues[r - 1] <= 1e-12 * top {
        return Err(Error::numerical(format!(
            "panel has rank below the requested {r} factors"
        )));
    }
    Ok(())
}

/// Information criterion for choosing the number of factors.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum InfoCriterion {
    ICp1,
    ICp2,
}

impl InfoCriterion {
    /// Penalty per factor.
    pub fn penalty(self, n: usize, t: usize) -> f64 {
        let (nf, tf) = (n as f64, t as f64);
        let scale = (nf + tf) / (nf * tf);
        match self {
            InfoCriterion::ICp1 => scale * (nf * tf / (nf + tf)).ln(),
            InfoCriterion::ICp2 => scale * (nf.min(tf)).ln(),
        }
    }
}

/// Selects the number of factors minimizing `ln V(r) + r * penalty(N, T)`
/// over `1..=r_max`, where `V(r)` is the mean squared PCA residual.
/// Ties go to the smaller `r`.
pub fn ic_num_factors(x: &DMatrix<f64>, r_max: usize, criterion: InfoCriterion) -> Result<usize> {
    let (t, n) = x.shape();
    if r_max < 1 || r_max > n.min(t) / 2 {
        return Err(Error::arg(format!(
            "r_max = {r_max} must lie in 1..={}",
            n.min(t) / 2
        )));
    }
    if !all_finite(x) {
        return Err(Error::input("panel contains non-finite entries"));
    }
    let tf = t as f64;
    let small = if t < n { x * x.transpose() } else { x.transpose() * x };
    let (vals, _) = sorted_sym_eigen(&(small / tf));
    let total = x.norm_squared() / tf;
    let penalty = criterion.penalty(n, t);
    let floor = f64::MIN_POSITIVE;
    let mut best = (f64::INFINITY, 1);
    let mut explained = 0.0;
    for (r, &ev) in vals.iter().enumerate().take(r_max) {
        explained += ev.max(0.0);
        let v = ((total - explained) / n as f64).max(floor);
        let ic = v.ln() + (r + 1) as f64 * penalty;
        if ic < best.0 {
            best = (ic, r + 1);
        }
    }
    Ok(best.1)
}

/// Least-squares factor value for one period given fixed loadings:
/// `(Lambda'Lambda)^{-1} Lambda' x_t`.
pub fn project_factor(loadings: &DMatrix<f64>, x_t: &DVector<f64>) -> Result<DVector<f64>> {
    if loadings.nrows() != x_t.len() {
        return Err(Error::arg("loadings and observation differ in length"));
    }
    let gram = loadings.transpose() * loadings;
    let scale = gram.diagonal().amax();
    let chol = (scale > 0.0)
        .then(|| gram.clone().cholesky())
        .flatten()
        .ok_or_else(|| Error::numerical("loadings are rank deficient"))?;
    // reject near-singular Gram matrices that Cholesky still accepts
    let l = chol.l();
    let min_pivot = l.diagonal().iter().fold(f64::INFINITY, |a, b| a.min(b * b));
    if min_pivot <= 1e-12 * scale {
        return Err(Error::numerical("loadings are rank deficient"));
    }
    Ok(chol.solve(&(loadings.transpose() * x_t)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::{simulate_panel, standardize, DgpSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(t: usize, n: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(t, n, |_, _| rng.random_range(-1.0..1.0))
    }

    fn corr(a: &[f64], b: &[f64]) -> f64 {
        let ma = crate::linalg::mean(a);
        let mb = crate::linalg::mean(b);
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    /// Leading eigenpair by power iteration, used as an independent check.
    fn power_iteration(m: &DMatrix<f64>) -> f64 {
        let mut v = DVector::from_element(m.nrows(), 1.0);
        let mut lambda = 0.0;
        for _ in 0..5000 {
            let w = m * &v;
            lambda = w.norm();
            v = w / lambda;
        }
        lambda
    }

    #[test]
    fn normalization_and_least_squares_loadings() {
        for (t, n) in [(40, 12), (10, 25)] {
            let x = random_matrix(t, n, 3);
            let est = estimate_factors(&x, 3).unwrap();
            let ftf = est.factors.transpose() * &est.factors / t as f64;
            assert!((ftf - DMatrix::identity(3, 3)).amax() < 1e-8);
            let lam = x.transpose() * &est.factors / t as f64;
            assert!((lam - &est.loadings).amax() < 1e-8);
            assert!(est.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
            assert!(est.eigenvalues.iter().all(|v| *v >= 0.0));
            assert_eq!(est.eigenvalues.len(), n.min(t));
            let resid = &x - est.common_component();
            let direct = resid.norm_squared() / t as f64;
            assert!((direct - est.residual_variance()).abs() < 1e-8);
            for j in 0..3 {
                assert!(est.loadings.column(j).sum() >= 0.0);
            }
        }
    }

    #[test]
    fn exact_rank_one_recovers_factor() {
        let f: Vec<f64> = (0..50).map(|t| ((t as f64) * 0.37).sin() + 0.1 * t as f64).collect();
        let lam: Vec<f64> = (0..8).map(|i| 0.5 + i as f64 * 0.1).collect();
        let x = DMatrix::from_fn(50, 8, |r, c| f[r] * lam[c]);
        let est = estimate_factors(&x, 1).unwrap();
        let c = corr(&est.factor(0), &f);
        assert!(c.abs() >= 1.0 - 1e-10, "corr {c}");
        assert!(estimate_factors(&x, 2).is_err());
    }

    #[test]
    fn explained_share_matches_power_iteration() {
        let x = random_matrix(60, 9, 17);
        let est = estimate_factors(&x, 1).unwrap();
        let m = x.transpose() * &x / 60.0;
        let top = power_iteration(&m);
        let share = top / m.trace();
        assert!((est.explained_share() - share).abs() < 1e-9);
    }

    #[test]
    fn scale_equivariance() {
        let x = random_matrix(30, 6, 5);
        let a = estimate_factors(&x, 2).unwrap();
        let b = estimate_factors(&(&x * 3.0), 2).unwrap();
        for (ea, eb) in a.eigenvalues.iter().zip(&b.eigenvalues) {
            assert!((eb - 9.0 * ea).abs() < 1e-9);
        }
        assert!((a.factors - b.factors).amax() < 1e-8);
    }

    #[test]
    fn common_component_invariant_to_sign() {
        let x = random_matrix(30, 6, 9);
        let a = estimate_factors(&x, 2).unwrap();
        let mut flipped = a.clone();
        flipped.factors.column_mut(0).neg_mut();
        flipped.loadings.column_mut(0).neg_mut();
        assert!((a.common_component() - flipped.common_component()).amax() < 1e-12);
    }

    #[test]
    fn rejects_bad_inputs() {
        let x = random_matrix(5, 3, 1);
        assert!(estimate_factors(&x, 4).is_err());
        assert!(estimate_factors(&x, 0).is_err());
        let mut y = x.clone();
        y[(0, 0)] = f64::NAN;
        assert!(estimate_factors(&y, 1).is_err());
    }

    #[test]
    fn ic_finds_two_noiseless_factors() {
        let t = 80;
        let n = 20;
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let f = DMatrix::from_fn(t, 2, |_, _| rng.random_range(-1.0..1.0));
        let l = DMatrix::from_fn(n, 2, |_, _| rng.random_range(-1.0..1.0));
        let x = &f * l.transpose();
        // residual collapses at r = 2
        let est = estimate_factors(&x, 2).unwrap();
        assert!(est.residual_variance() < 1e-10);
        assert_eq!(ic_num_factors(&x, 6, InfoCriterion::ICp1).unwrap(), 2);
        assert_eq!(ic_num_factors(&x, 6, InfoCriterion::ICp2).unwrap(), 2);
    }

    #[test]
    fn ic_white_noise_floors_at_one() {
        let x = random_matrix(100, 30, 2);
        assert_eq!(ic_num_factors(&x, 5, InfoCriterion::ICp2).unwrap(), 1);
        assert!(ic_num_factors(&x, 0, InfoCriterion::ICp2).is_err());
        assert!(ic_num_factors(&x, 16, InfoCriterion::ICp2).is_err());
    }

    #[test]
    fn ic_strong_single_factor() {
        let spec = DgpSpec {
            noise_scale: 0.1,
            ..DgpSpec::no_break(30, 200)
        };
        let (p, _) = simulate_panel(&spec, 4).unwrap();
        let s = standardize(&p, None).unwrap();
        assert_eq!(ic_num_factors(s.values(), 6, InfoCriterion::ICp1).unwrap(), 1);
    }

    #[test]
    fn projection_cases() {
        let lam = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 1.0, 1.0, 0.0, 2.0, 1.0, -1.0]);
        let g = DVector::from_vec(vec![0.7, -1.2]);
        let x = &lam * &g;
        let got = project_factor(&lam, &x).unwrap();
        assert!((got - &g).amax() < 1e-12);

        let lam1 = DMatrix::from_column_slice(3, 1, &[1.0, 1.0, 0.0]);
        let orth = DVector::from_vec(vec![1.0, -1.0, 5.0]);
        assert!(project_factor(&lam1, &orth).unwrap().amax() < 1e-14);

        let rank_def = DMatrix::from_column_slice(3, 2, &[1.0, 2.0, 3.0, 2.0, 4.0, 6.0]);
        assert!(project_factor(&rank_def, &orth).is_err());
    }

    #[test]
    fn projection_matches_normal_equations() {
        let lam = random_matrix(10, 3, 31);
        let x = DVector::from_iterator(10, random_matrix(10, 1, 32).iter().copied());
        let got = project_factor(&lam, &x).unwrap();
        // solve via QR as the independent route
        let qr = lam.clone().qr();
        let qtx = qr.q().transpose() * &x;
        let want = qr.r().solve_upper_triangular(&qtx).unwrap();
        assert!((got - want).amax() < 1e-10);
    }
}
