use nalgebra::{DMatrix, SymmetricEigen};

/// Eigen-decomposition of a symmetric matrix with eigenvalues sorted in
/// non-increasing order (eigenvectors as matching columns).
pub(crate) fn sorted_sym_eigen(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = m.nrows();
    // symmetrize to keep round-off from leaking into the eigensolver
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

pub(crate) fn all_finite(m: &DMatrix<f64>) -> bool {
    m.iter().all(|v| v.is_finite())
}

pub(crate) fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample variance with divisor `n - 1`.
pub(crate) fn sample_var(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// Least-squares solve via the normal equations with a Cholesky factor.
#[cfg(test)]
pub(crate) fn normal_equations(
    a: &DMatrix<f64>,
    b: &nalgebra::DVector<f64>,
) -> crate::Result<nalgebra::DVector<f64>> {
    let ata = a.transpose() * a;
    let atb = a.transpose() * b;
    let chol = ata
        .cholesky()
        .ok_or_else(|| crate::Error::numerical("design matrix is rank deficient"))?;
    Ok(chol.solve(&atb))
}
