//! Dense symmetric matrix primitives: positive-definite modification,
//! inverse square roots, spectral norms and the curvature damping factor.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use thiserror::Error;

/// Symmetric matrices are stored as full dense `DMatrix` values.
pub type SymMatrix = DMatrix<f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("matrix contains non-finite entries")]
    NonFinite,
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix is not positive definite (smallest eigenvalue {min_eigenvalue:e})")]
    NotPositiveDefinite { min_eigenvalue: f64 },
    #[error("linear system is singular")]
    Singular,
}

fn check(a: &SymMatrix) -> Result<(), LinalgError> {
    if !a.is_square() {
        return Err(LinalgError::NotSquare {
            rows: a.nrows(),
            cols: a.ncols(),
        });
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(LinalgError::NonFinite);
    }
    Ok(())
}

/// Returns `(A + Aᵀ) / 2`.
pub fn symmetrize(a: &SymMatrix) -> SymMatrix {
    (a + a.transpose()) * 0.5
}

/// Eigendecomposition of a symmetric matrix. Eigenvalues are not sorted.
pub fn sym_eigen(a: &SymMatrix) -> Result<SymmetricEigen<f64, nalgebra::Dyn>, LinalgError> {
    check(a)?;
    let eig = SymmetricEigen::try_new(a.clone(), f64::EPSILON, 0).ok_or(LinalgError::NonFinite)?;
    if eig.eigenvalues.iter().any(|v| !v.is_finite()) {
        return Err(LinalgError::NonFinite);
    }
    Ok(eig)
}

pub fn min_eigenvalue(a: &SymMatrix) -> Result<f64, LinalgError> {
    if a.nrows() == 0 {
        return Ok(f64::INFINITY);
    }
    Ok(sym_eigen(a)?.eigenvalues.min())
}

/// Largest absolute eigenvalue.
pub fn spectral_norm(a: &SymMatrix) -> Result<f64, LinalgError> {
    if a.nrows() == 0 {
        check(a)?;
        return Ok(0.0);
    }
    Ok(sym_eigen(a)?.eigenvalues.amax())
}

/// Default eigenvalue floor used by the solver: `1e-8 * max(1, |A|)`.
pub fn default_floor(a: &SymMatrix) -> Result<f64, LinalgError> {
    Ok(1e-8 * spectral_norm(a)?.max(1.0))
}

fn reconstruct(eig: &SymmetricEigen<f64, nalgebra::Dyn>, values: &DVector<f64>) -> SymMatrix {
    let q = &eig.eigenvectors;
    let scaled = q * DMatrix::from_diagonal(values);
    symmetrize(&(scaled * q.transpose()))
}

// Slack on the "already above the floor" test. Without it a reconstructed
// matrix whose smallest eigenvalue lands a rounding error below the floor
// would be modified a second time.
fn bypass_slack(eig: &SymmetricEigen<f64, nalgebra::Dyn>) -> f64 {
    let n = eig.eigenvalues.len() as f64;
    8.0 * n * f64::EPSILON * eig.eigenvalues.amax().max(1.0)
}

/// Positive definite modification by eigenvalue clipping.
///
/// Returns `Q diag(max(λᵢ, floor)) Qᵀ`. A matrix whose eigenvalues already
/// lie above `floor` is returned unchanged, so the map is idempotent.
pub fn psd_modify(a: &SymMatrix, floor: f64) -> Result<SymMatrix, LinalgError> {
    psd_clip(a, floor, f64::INFINITY)
}

/// Like [`psd_modify`] but also clips eigenvalues from above at `cap`.
pub fn psd_clip(a: &SymMatrix, floor: f64, cap: f64) -> Result<SymMatrix, LinalgError> {
    debug_assert!(floor > 0.0 && cap >= floor);
    if a.nrows() == 0 {
        check(a)?;
        return Ok(a.clone());
    }
    let eig = sym_eigen(a)?;
    let slack = bypass_slack(&eig);
    let lo = eig.eigenvalues.min();
    let hi = eig.eigenvalues.max();
    if lo >= floor - slack && hi <= cap + slack {
        return Ok(a.clone());
    }
    let clipped = eig.eigenvalues.map(|l| l.clamp(floor, cap));
    Ok(reconstruct(&eig, &clipped))
}

/// `A^{-1/2}` for a symmetric positive definite `A`.
pub fn inv_sqrt_psd(a: &SymMatrix) -> Result<SymMatrix, LinalgError> {
    if a.nrows() == 0 {
        check(a)?;
        return Ok(a.clone());
    }
    let eig = sym_eigen(a)?;
    let lo = eig.eigenvalues.min();
    if lo <= 0.0 {
        return Err(LinalgError::NotPositiveDefinite { min_eigenvalue: lo });
    }
    let values = eig.eigenvalues.map(|l| 1.0 / l.sqrt());
    Ok(reconstruct(&eig, &values))
}

/// `min(1, cap / norm)`, with the value 1 for a zero matrix.
pub fn damping_factor(matrix_norm: f64, cap: f64) -> f64 {
    debug_assert!(matrix_norm >= 0.0 && cap > 0.0);
    if matrix_norm <= cap {
        1.0
    } else {
        cap / matrix_norm
    }
}

/// Solves `A x = b` for symmetric positive definite `A`, falling back to LU
/// when the Cholesky factorization breaks down numerically.
pub fn solve_spd(a: &SymMatrix, b: &DVector<f64>) -> Result<DVector<f64>, LinalgError> {
    if let Some(chol) = a.clone().cholesky() {
        let x = chol.solve(b);
        if x.iter().all(|v| v.is_finite()) {
            return Ok(x);
        }
    }
    let x = a.clone().lu().solve(b).ok_or(LinalgError::Singular)?;
    if x.iter().all(|v| v.is_finite()) {
        Ok(x)
    } else {
        Err(LinalgError::Singular)
    }
}

/// `xᵀ A x`.
pub fn quad_form(a: &SymMatrix, x: &DVector<f64>) -> f64 {
    x.dot(&(a * x))
}
