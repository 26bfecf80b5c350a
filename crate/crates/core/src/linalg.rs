//! Dense SPD helpers shared by the estimators.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative residual tolerance for solves on model matrices.
pub const SOLVE_TOLERANCE: f64 = 1e-10;

/// Solves `a x = b` for symmetric positive definite `a` through a Cholesky
/// factorization, then checks the normwise relative residual
/// `|a x - b| / (|a| |x| + |b|)` against `tolerance`.
pub fn spd_solve(a: &DMatrix<f64>, b: &DVector<f64>, tolerance: f64) -> Result<DVector<f64>> {
    let chol = a.clone().cholesky().ok_or(Error::SolveFailed {
        residual: f64::INFINITY,
        tolerance,
    })?;
    let x = chol.solve(b);
    let residual = relative_residual(a, &x, b);
    if !(residual <= tolerance) {
        return Err(Error::SolveFailed { residual, tolerance });
    }
    Ok(x)
}

pub fn relative_residual(a: &DMatrix<f64>, x: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let r = a * x - b;
    let scale = a.norm() * x.norm() + b.norm();
    if scale == 0.0 {
        0.0
    } else {
        r.norm() / scale
    }
}

pub fn min_eigenvalue(a: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(a.clone())
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

pub fn is_symmetric(a: &DMatrix<f64>, tolerance: f64) -> bool {
    a.is_square() && (a - a.transpose()).norm() <= tolerance * a.norm().max(1.0)
}

/// Relative Frobenius distance `|a - b| / |b|` (absolute when `b` is zero).
pub fn relative_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let denom = b.norm();
    let diff = (a - b).norm();
    if denom == 0.0 {
        diff
    } else {
        diff / denom
    }
}
