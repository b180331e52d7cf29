//! Small dense symmetric-matrix helpers shared by the rate kernels.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

pub(crate) fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// Eigenpairs sorted by descending eigenvalue; ties keep ascending original index.
pub(crate) fn sorted_eigen(a: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(symmetrize(a));
    let mut idx: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    idx.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let values = idx.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(a.nrows(), idx.len(), |r, c| eig.eigenvectors[(r, idx[c])]);
    (values, vectors)
}

pub(crate) fn min_eigenvalue(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    SymmetricEigen::new(symmetrize(a))
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Rejects matrices that are not square, not symmetric, or have an
/// eigenvalue below `-tol * max(1, |A|)`.
pub(crate) fn check_psd(a: &DMatrix<f64>, tol: f64, what: &str) -> Result<()> {
    if a.nrows() != a.ncols() {
        return Err(Error::InvalidCovariance(format!("{what} is not square")));
    }
    if a.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidCovariance(format!("{what} has non-finite entries")));
    }
    let scale = a.norm().max(1.0);
    if (a - a.transpose()).norm() > tol * scale {
        return Err(Error::InvalidCovariance(format!("{what} is not symmetric")));
    }
    let lo = min_eigenvalue(a);
    if lo < -tol * scale {
        return Err(Error::InvalidCovariance(format!(
            "{what} has negative eigenvalue {lo:e}"
        )));
    }
    Ok(())
}

/// `ln det A` for a symmetric positive definite matrix.
pub(crate) fn logdet_pd(a: &DMatrix<f64>) -> Result<f64> {
    let chol = a
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NumericalFailure("matrix is not positive definite".into()))?;
    Ok(2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>())
}

pub(crate) fn inverse_pd(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let chol = a
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NumericalFailure("matrix is not positive definite".into()))?;
    Ok(symmetrize(&chol.inverse()))
}

/// Nearest PSD matrix in Frobenius norm (negative eigenvalues clipped).
pub(crate) fn project_psd(a: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(symmetrize(a));
    if eig.eigenvalues.iter().all(|&l| l >= 0.0) {
        return symmetrize(a);
    }
    let clipped = eig.eigenvalues.map(|l| l.max(0.0));
    let v = &eig.eigenvectors;
    symmetrize(&(v * DMatrix::from_diagonal(&clipped) * v.transpose()))
}

/// `N0 I + sum_j H_j Q_j H_j^T`.
pub(crate) fn received_covariance<'a>(
    noise: f64,
    m: usize,
    terms: impl IntoIterator<Item = (&'a DMatrix<f64>, &'a DMatrix<f64>)>,
) -> DMatrix<f64> {
    let mut acc = DMatrix::identity(m, m) * noise;
    for (h, q) in terms {
        acc += h * q * h.transpose();
    }
    symmetrize(&acc)
}
