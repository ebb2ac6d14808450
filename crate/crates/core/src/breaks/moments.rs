use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::linalg::{all_finite, sorted_sym_eigen};
use crate::{Error, Result};

/// Number of distinct second moments of an `r`-vector: `r(r+1)/2`.
pub fn vech_len(r: usize) -> usize {
    r * (r + 1) / 2
}

/// Row `t` is `vech(f_t f_t')`: the lower triangle of the outer product,
/// stacked column by column.
pub fn vech_moments(factors: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (t, r) = factors.shape();
    if r == 0 {
        return Err(Error::arg("factor path needs at least one column"));
    }
    if !all_finite(factors) {
        return Err(Error::input("factor path contains non-finite values"));
    }
    let nu = vech_len(r);
    let mut out = DMatrix::zeros(t, nu);
    for row in 0..t {
        let mut k = 0;
        for j in 0..r {
            for i in j..r {
                out[(row, k)] = factors[(row, i)] * factors[(row, j)];
                k += 1;
            }
        }
    }
    Ok(out)
}

/// Kernel used for the long-run covariance.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Kernel {
    Bartlett,
}

/// HAC estimate of the long-run covariance of a moment series.
#[derive(Clone, Debug, PartialEq)]
pub struct LongRunCov {
    pub omega: DMatrix<f64>,
    pub bandwidth: usize,
    pub kernel: Kernel,
    /// Ridge added to the diagonal when the estimate was near-singular.
    pub ridge: f64,
    pub condition_number: f64,
}

impl LongRunCov {
    pub fn was_regularized(&self) -> bool {
        self.ridge > 0.0
    }
}

/// Default Bartlett truncation lag `floor(4 (T/100)^{2/9})`.
pub fn default_bandwidth(t: usize) -> usize {
    (4.0 * (t as f64 / 100.0).powf(2.0 / 9.0)).floor() as usize
}

const MAX_CONDITION: f64 = 1e12;

/// Bartlett-kernel long-run covariance of an already demeaned `T x nu` series:
/// `Gamma_0 + sum_{k=1}^{B} (1 - k/(B+1)) (Gamma_k + Gamma_k')`.
///
/// If the condition number exceeds 1e12 a ridge of `1e-8 * trace / nu` is
/// added to the diagonal and recorded.
pub fn hac_long_run_cov(z: &DMatrix<f64>, bandwidth: Option<usize>) -> Result<LongRunCov> {
    let (t, nu) = z.shape();
    let b = bandwidth.unwrap_or_else(|| default_bandwidth(t));
    if nu == 0 || t <= 2 * b || t < 2 {
        return Err(Error::arg(format!(
            "long-run covariance needs T > 2 * bandwidth (T = {t}, bandwidth = {b})"
        )));
    }
    if !all_finite(z) {
        return Err(Error::input("moment series contains non-finite values"));
    }
    let tf = t as f64;
    let mut omega = z.transpose() * z / tf;
    for k in 1..=b {
        let lead = z.rows(k, t - k);
        let lag = z.rows(0, t - k);
        let gamma = lead.transpose() * lag / tf;
        let w = 1.0 - k as f64 / (b as f64 + 1.0);
        omega += (&gamma + gamma.transpose()) * w;
    }
    omega = (&omega + omega.transpose()) * 0.5;

    let (vals, _) = sorted_sym_eigen(&omega);
    let max = vals[0];
    let min = vals[nu - 1];
    let cond = if min > 0.0 { max / min } else { f64::INFINITY };
    let mut ridge = 0.0;
    if !(cond <= MAX_CONDITION) {
        ridge = 1e-8 * omega.trace().max(f64::MIN_POSITIVE) / nu as f64;
        for i in 0..nu {
            omega[(i, i)] += ridge;
        }
    }
    Ok(LongRunCov {
        omega,
        bandwidth: b,
        kernel: Kernel::Bartlett,
        ridge,
        condition_number: cond,
    })
}

/// Subtracts column means.
pub fn demean(z: &DMatrix<f64>) -> DMatrix<f64> {
    let t = z.nrows() as f64;
    let mut out = z.clone();
    for mut col in out.column_iter_mut() {
        let m = col.sum() / t;
        col.add_scalar_mut(-m);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn vech_small_cases() {
        let f = DMatrix::from_row_slice(2, 1, &[2.0, -3.0]);
        let z = vech_moments(&f).unwrap();
        assert_eq!(z.as_slice(), &[4.0, 9.0]);

        let f = DMatrix::from_row_slice(1, 2, &[1.0, 2.0]);
        let z = vech_moments(&f).unwrap();
        assert_eq!(z.row(0).iter().copied().collect::<Vec<_>>(), vec![1.0, 2.0, 4.0]);

        let f = DMatrix::from_element(4, 3, 1.0);
        assert_eq!(vech_moments(&f).unwrap().ncols(), 6);
    }

    #[test]
    fn bandwidth_zero_gives_sample_covariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let z = DMatrix::from_fn(200, 3, |_, _| StandardNormal.sample(&mut rng));
        let zd = demean(&z);
        let lr = hac_long_run_cov(&zd, Some(0)).unwrap();
        let cov = zd.transpose() * &zd / 200.0;
        assert!((lr.omega - cov).amax() < 1e-12);
    }

    #[test]
    fn ma1_long_run_variance() {
        let theta = 0.5;
        let t = 5000;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let e: Vec<f64> = (0..=t).map(|_| StandardNormal.sample(&mut rng)).collect();
        let z = DMatrix::from_fn(t, 1, |r, _| e[r + 1] + theta * e[r]);
        let lr = hac_long_run_cov(&demean(&z), Some(30)).unwrap();
        let truth = (1.0 + theta) * (1.0 + theta);
        assert!((lr.omega[(0, 0)] - truth).abs() / truth < 0.10, "{}", lr.omega[(0, 0)]);
    }

    #[test]
    fn default_bandwidth_is_monotone() {
        let mut prev = 0;
        for t in (50..5000).step_by(50) {
            let b = default_bandwidth(t);
            assert!(b >= prev);
            prev = b;
        }
        assert_eq!(default_bandwidth(100), 4);
        assert_eq!(default_bandwidth(408), 5);
    }

    #[test]
    fn symmetric_psd_and_ridge() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let z = DMatrix::from_fn(100, 3, |_, _| StandardNormal.sample(&mut rng));
        let lr = hac_long_run_cov(&demean(&z), None).unwrap();
        assert!((&lr.omega - lr.omega.transpose()).amax() < 1e-10);
        let (vals, _) = sorted_sym_eigen(&lr.omega);
        assert!(vals[2] >= -1e-8);
        assert!(!lr.was_regularized());

        // two identical columns: singular
        let dup = DMatrix::from_fn(100, 2, |r, _| z[(r, 0)]);
        let lr = hac_long_run_cov(&demean(&dup), None).unwrap();
        assert!(lr.was_regularized());
        assert!(lr.omega.clone().cholesky().is_some());
    }

    #[test]
    fn too_short_for_bandwidth() {
        let z = DMatrix::zeros(10, 1);
        assert!(hac_long_run_cov(&z, Some(5)).is_err());
    }
}
