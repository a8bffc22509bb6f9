//! Small dense helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative size below which a QR diagonal marks a collinear column.
pub const RANK_TOL: f64 = 1e-10;

/// Least-squares fit via Householder QR.
#[derive(Debug, Clone)]
pub struct LeastSquares {
    pub coef: DVector<f64>,
    /// `(X'X)^{-1}`
    pub bread: DMatrix<f64>,
}

/// Returns the upper-triangular QR factor of `x`, or the name of the first
/// column whose diagonal falls below `RANK_TOL` times the leading one.
pub fn qr_r_checked(x: &DMatrix<f64>, names: &[String]) -> Result<DMatrix<f64>> {
    let k = x.ncols();
    if x.nrows() < k {
        return Err(Error::TooFewRows {
            rows: x.nrows(),
            params: k,
        });
    }
    let r = x.clone().qr().r();
    let lead = r[(0, 0)].abs();
    for j in 0..k {
        if !(r[(j, j)].abs() > RANK_TOL * lead) || lead == 0.0 {
            let name = names.get(j).cloned().unwrap_or_else(|| format!("#{j}"));
            return Err(Error::RankDeficient(name));
        }
    }
    Ok(r)
}

/// Inverse of an upper-triangular matrix with nonzero diagonal.
fn upper_inverse(r: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    r.clone()
        .solve_upper_triangular(&DMatrix::identity(r.nrows(), r.ncols()))
        .ok_or(Error::Singular)
}

pub fn least_squares(x: &DMatrix<f64>, y: &DVector<f64>, names: &[String]) -> Result<LeastSquares> {
    let r = qr_r_checked(x, names)?;
    let r_inv = upper_inverse(&r)?;
    let bread = symmetrize(&r_inv * r_inv.transpose());
    let coef = &bread * (x.transpose() * y);
    // one step of iterative refinement against the normal equations
    let resid = y - x * &coef;
    let coef = coef + &bread * (x.transpose() * resid);
    Ok(LeastSquares { coef, bread })
}

/// Inverse of a symmetric positive definite matrix.
pub fn spd_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let chol = m.clone().cholesky().ok_or(Error::Singular)?;
    Ok(symmetrize(chol.inverse()))
}

pub fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}
