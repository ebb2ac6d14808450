use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Row-stochastic transition matrix, `p[i][j] = Pr(S_t = j | S_{t-1} = i)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct TransitionMatrix {
    rows: Vec<Vec<f64>>,
}

const ROW_TOL: f64 = 1e-10;

impl TransitionMatrix {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let m = rows.len();
        if m == 0 {
            return Err(Error::arg("transition matrix is empty"));
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != m {
                return Err(Error::arg(format!("transition matrix row {} has {} entries, expected {m}", i + 1, row.len())));
            }
            if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::arg(format!("transition matrix row {} has entries outside [0, 1]", i + 1)));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > ROW_TOL {
                return Err(Error::arg(format!("transition matrix row {} sums to {s}, not 1", i + 1)));
            }
        }
        Ok(Self { rows: rows.to_vec() })
    }

    pub fn from_matrix(p: &DMatrix<f64>) -> Result<Self> {
        if !p.is_square() {
            return Err(Error::arg("transition matrix must be square"));
        }
        let rows: Vec<Vec<f64>> = p.row_iter().map(|r| r.iter().copied().collect()).collect();
        Self::from_rows(&rows)
    }

    pub fn identity(m: usize) -> Self {
        let rows = (0..m).map(|i| (0..m).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
        Self { rows }
    }

    /// Rows normalized to sum to one; used internally where round-off from
    /// estimation must not trip validation.
    pub(crate) fn normalized(mut rows: Vec<Vec<f64>>) -> Self {
        for row in &mut rows {
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|p| *p /= s);
        }
        Self { rows }
    }

    pub fn n_regimes(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.rows[i][j]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        let m = self.n_regimes();
        DMatrix::from_fn(m, m, |i, j| self.rows[i][j])
    }

    /// Relabels regimes so that new regime `k` is old regime `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let rows = perm.iter().map(|&a| perm.iter().map(|&b| self.rows[a][b]).collect()).collect();
        Self { rows }
    }
}

impl TryFrom<Vec<Vec<f64>>> for TransitionMatrix {
    type Error = Error;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        Self::from_rows(&rows)
    }
}

impl From<TransitionMatrix> for Vec<Vec<f64>> {
    fn from(p: TransitionMatrix) -> Self {
        p.rows
    }
}

/// Stationary distribution `pi` with `pi' P = pi'`, from the least-squares
/// solution of `[I - P'; 1'] pi = e_{M+1}`.
///
/// A chain with more than one stationary distribution makes the stacked
/// system rank deficient and is rejected.
pub fn ergodic_probs(p: &TransitionMatrix) -> Result<Vec<f64>> {
    let m = p.n_regimes();
    let pm = p.matrix();
    let mut a = DMatrix::zeros(m + 1, m);
    a.view_mut((0, 0), (m, m)).copy_from(&(DMatrix::identity(m, m) - pm.transpose()));
    a.row_mut(m).fill(1.0);
    let svd = a.clone().svd(true, true);
    let smin = svd.singular_values.min();
    if smin < 1e-10 {
        return Err(Error::numerical(
            "transition matrix has more than one stationary distribution",
        ));
    }
    let mut e = DVector::zeros(m + 1);
    e[m] = 1.0;
    let pi = svd
        .solve(&e, 0.0)
        .map_err(|msg| Error::numerical(format!("ergodic solve failed: {msg}")))?;
    let total: f64 = pi.iter().map(|v| v.max(0.0)).sum();
    Ok(pi.iter().map(|v| v.max(0.0) / total).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn validation() {
        assert!(TransitionMatrix::from_rows(&[vec![0.5, 0.5], vec![0.2, 0.8]]).is_ok());
        assert!(TransitionMatrix::from_rows(&[vec![0.5, 0.6], vec![0.2, 0.8]]).is_err());
        assert!(TransitionMatrix::from_rows(&[vec![1.2, -0.2], vec![0.2, 0.8]]).is_err());
        assert!(TransitionMatrix::from_rows(&[vec![1.0]]).is_ok());
        assert!(TransitionMatrix::from_rows(&[vec![0.5, 0.5]]).is_err());
    }

    #[test]
    fn symmetric_two_state() {
        let p = TransitionMatrix::from_rows(&[vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
        let pi = ergodic_probs(&p).unwrap();
        assert!((pi[0] - 0.5).abs() < 1e-12 && (pi[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn reducible_chain_rejected() {
        let p = TransitionMatrix::identity(2);
        assert!(ergodic_probs(&p).unwrap_err().is_numerical());
    }

    #[test]
    fn matches_power_iteration() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for m in 2..=5 {
            let rows: Vec<Vec<f64>> = (0..m)
                .map(|_| {
                    let raw: Vec<f64> = (0..m).map(|_| rng.random_range(0.05..1.0)).collect();
                    let s: f64 = raw.iter().sum();
                    raw.iter().map(|v| v / s).collect()
                })
                .collect();
            let p = TransitionMatrix::normalized(rows);
            let pi = ergodic_probs(&p).unwrap();
            let mut power = p.matrix();
            for _ in 0..10 {
                power = &power * &power;
            }
            for i in 0..m {
                for j in 0..m {
                    assert!((power[(i, j)] - pi[j]).abs() < 1e-6);
                }
            }
            let pm = p.matrix();
            let check = DVector::from_vec(pi.clone()).transpose() * pm;
            for j in 0..m {
                assert!((check[j] - pi[j]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn permutation_preserves_ergodic_shares() {
        let p = TransitionMatrix::from_rows(&[vec![0.9, 0.1, 0.0], vec![0.05, 0.9, 0.05], vec![0.2, 0.0, 0.8]]).unwrap();
        let pi = ergodic_probs(&p).unwrap();
        let perm = [2, 0, 1];
        let q = ergodic_probs(&p.permuted(&perm)).unwrap();
        for (k, &old) in perm.iter().enumerate() {
            assert!((q[k] - pi[old]).abs() < 1e-12);
        }
    }

    #[test]
    fn serde_round_trip() {
        let p = TransitionMatrix::from_rows(&[vec![0.7, 0.3], vec![0.4, 0.6]]).unwrap();
        let s = serde_json::to_string(&p).unwrap();
        assert_eq!(s, "[[0.7,0.3],[0.4,0.6]]");
        let back: TransitionMatrix = serde_json::from_str(&s).unwrap();
        assert_eq!(back, p);
        assert!(serde_json::from_str::<TransitionMatrix>("[[0.7,0.4],[0.4,0.6]]").is_err());
    }
}
