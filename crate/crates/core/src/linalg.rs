//! Small dense linear-algebra helpers on top of `nalgebra`.

use nalgebra::{Complex, DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Absolute tolerance for symmetry and PSD checks, scaled by `max(1, |M|_max)`.
pub const SYM_TOL: f64 = 1e-10;

pub fn from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::DimensionMismatch("ragged matrix rows".into()));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0_f64;
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn scaled_tol(m: &DMatrix<f64>) -> f64 {
    SYM_TOL * max_abs(m).max(1.0)
}

/// Checks squareness and symmetry, returning the exactly-symmetrized copy.
pub fn check_symmetric(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !m.is_square() {
        return Err(Error::DimensionMismatch(format!(
            "expected square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    let asym = asymmetry(m);
    if asym > scaled_tol(m) {
        return Err(Error::NonSymmetric(asym));
    }
    Ok(symmetrize(m))
}

/// Symmetric eigendecomposition with negative round-off eigenvalues clamped to zero.
///
/// Rejects matrices with an eigenvalue below `-SYM_TOL * max(1, |M|_max)`.
pub fn psd_eigen(m: &DMatrix<f64>) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    let sym = check_symmetric(m)?;
    let tol = scaled_tol(&sym);
    let mut eig = SymmetricEigen::new(sym);
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if min < -tol {
        return Err(Error::NotPsd(min));
    }
    eig.eigenvalues.iter_mut().for_each(|l| *l = l.max(0.0));
    Ok(eig)
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(symmetrize(m))
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

pub fn is_pd(m: &DMatrix<f64>) -> bool {
    m.clone().cholesky().is_some()
}

pub fn require_pd(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let sym = check_symmetric(m)?;
    if !is_pd(&sym) {
        return Err(Error::NotPd(what.to_string()));
    }
    Ok(sym)
}

pub fn inverse(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    m.clone()
        .try_inverse()
        .ok_or_else(|| Error::NotPd(format!("{what} is singular")))
}

pub fn spd_inverse(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let chol = m
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotPd(what.to_string()))?;
    Ok(symmetrize(&chol.inverse()))
}

/// Largest eigenvalue modulus.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    m.complex_eigenvalues()
        .iter()
        .map(|l| l.norm())
        .fold(0.0, f64::max)
}

pub fn complex_eigenvalues(m: &DMatrix<f64>) -> Vec<Complex<f64>> {
    m.complex_eigenvalues().iter().cloned().collect()
}

/// Numerical rank of a complex matrix via singular values.
pub fn complex_rank(m: &DMatrix<Complex<f64>>, rel_tol: f64) -> usize {
    let svd = m.clone().svd(false, false);
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    if smax == 0.0 {
        return 0;
    }
    svd.singular_values
        .iter()
        .filter(|s| **s > rel_tol * smax)
        .count()
}

/// Moore–Penrose pseudo-inverse of a symmetric PSD matrix plus an orthonormal
/// basis of its null space.
pub fn psd_pinv(m: &DMatrix<f64>, rel_tol: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = m.nrows();
    let eig = SymmetricEigen::new(symmetrize(m));
    let lmax = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let cut = rel_tol * lmax.max(f64::MIN_POSITIVE);
    let mut pinv = DMatrix::zeros(n, n);
    let mut null_cols = Vec::new();
    for (i, &l) in eig.eigenvalues.iter().enumerate() {
        let v = eig.eigenvectors.column(i);
        if l > cut {
            pinv += (v * v.transpose()) / l;
        } else {
            null_cols.push(v.into_owned());
        }
    }
    let null = if null_cols.is_empty() {
        DMatrix::zeros(n, 0)
    } else {
        DMatrix::from_columns(&null_cols)
    };
    (pinv, null)
}

/// Orthonormal basis of the range of a symmetric PSD matrix.
pub fn psd_range(m: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let n = m.nrows();
    let eig = SymmetricEigen::new(symmetrize(m));
    let lmax = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    if lmax <= 0.0 {
        return DMatrix::zeros(n, 0);
    }
    let cols: Vec<DVector<f64>> = eig
        .eigenvalues
        .iter()
        .enumerate()
        .filter(|(_, &l)| l > rel_tol * lmax)
        .map(|(i, _)| eig.eigenvectors.column(i).into_owned())
        .collect();
    DMatrix::from_columns(&cols)
}

/// Solves the Stein equation `X - Aᵀ X A = W` by vectorization.
pub fn solve_stein(a: &DMatrix<f64>, w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let at = a.transpose();
    // vec(Aᵀ X A) = (Aᵀ ⊗ Aᵀ) vec(X) in column-major order.
    let kron = at.kronecker(&at);
    let lhs = DMatrix::identity(n * n, n * n) - kron;
    let rhs = DVector::from_column_slice(w.as_slice());
    let sol = lhs
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::NoConvergence("singular Stein system".into()))?;
    Ok(symmetrize(&DMatrix::from_column_slice(n, n, sol.as_slice())))
}

pub fn log_det_spd(m: &DMatrix<f64>) -> Option<f64> {
    let chol = m.clone().cholesky()?;
    let l = chol.l_dirty();
    Some(2.0 * (0..m.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spectral_radius_of_rotation_is_scale() {
        let m = DMatrix::from_row_slice(2, 2, &[0.0, -0.5, 0.5, 0.0]);
        assert!((spectral_radius(&m) - 0.5).abs() < 1e-14);
    }

    #[test]
    fn stein_solution_satisfies_equation() {
        let a = DMatrix::from_row_slice(2, 2, &[0.84, 0.23, -0.47, 0.12]);
        let w = DMatrix::identity(2, 2);
        let x = solve_stein(&a, &w).unwrap();
        let resid = &x - a.transpose() * &x * &a - &w;
        assert!(max_abs(&resid) < 1e-12);
    }

    #[test]
    fn pinv_of_rank_one() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let (p, null) = psd_pinv(&m, 1e-12);
        assert!((p[(0, 0)] - 1.0).abs() < 1e-14);
        assert_eq!(null.ncols(), 1);
    }

    #[test]
    fn rejects_asymmetric() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]);
        assert!(matches!(check_symmetric(&m), Err(Error::NonSymmetric(_))));
    }
}
