//! Small dense linear-algebra helpers shared by the linear posterior, the
//! oracle and prior fitting.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Largest condition number accepted before a solve is reported as singular.
pub const MAX_CONDITION: f64 = 1e12;

/// Smallest eigenvalue a prior covariance may have.
pub const MIN_PRIOR_EIGENVALUE: f64 = 1e-10;

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

pub fn symmetric_eigenvalues(m: &DMatrix<f64>) -> DVector<f64> {
    m.clone().symmetric_eigenvalues()
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    symmetric_eigenvalues(m).min()
}

/// Ratio of extreme eigenvalues of a symmetric matrix; infinite when it is not
/// positive definite.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let eig = symmetric_eigenvalues(m);
    let (lo, hi) = (eig.min(), eig.max());
    if lo <= 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// Cholesky factor of a symmetric positive definite matrix whose condition
/// number is at most [`MAX_CONDITION`].
pub fn spd_factor(m: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    let cond = condition_number(m);
    if cond.is_nan() || cond > MAX_CONDITION {
        return Err(Error::IllConditioned(cond));
    }
    Cholesky::new(m.clone()).ok_or(Error::IllConditioned(cond))
}

/// Validates a prior covariance: square, symmetric and positive definite.
pub fn check_covariance(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::InvalidPrior(format!("{what} is not square")));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidPrior(format!("{what} has non-finite entries")));
    }
    let scale = m.amax().max(1.0);
    if (m - m.transpose()).amax() > 1e-10 * scale {
        return Err(Error::InvalidPrior(format!("{what} is not symmetric")));
    }
    let lo = min_eigenvalue(m);
    if lo <= MIN_PRIOR_EIGENVALUE {
        return Err(Error::InvalidPrior(format!(
            "{what} is not positive definite (minimum eigenvalue {lo:.3e})"
        )));
    }
    Ok(())
}

/// Inverse of an SPD matrix through its Cholesky factor, symmetrized.
pub fn spd_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mut inv = spd_factor(m)?.inverse();
    symmetrize(&mut inv);
    Ok(inv)
}
