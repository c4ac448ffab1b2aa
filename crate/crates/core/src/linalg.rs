//! Small dense helpers on top of `nalgebra`.
//!
//! Every matrix in this crate is a nonnegative (or nearly so) `d x d` block,
//! and the norm used throughout is the maximum absolute row sum.

use nalgebra::{DMatrix, DVector, RowDVector};

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;
pub type ColVec = DVector<f64>;
pub type RowVec = RowDVector<f64>;

/// Maximum absolute row sum, `||A|| = max_i sum_j |a(i,j)|`.
pub fn row_sum_norm(m: &Mat) -> f64 {
    m.row_iter()
        .map(|row| row.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn ones(d: usize) -> ColVec {
    ColVec::from_element(d, 1.0)
}

/// The stochastic matrix with every entry `1/d`.
pub fn uniform_stochastic(d: usize) -> Mat {
    Mat::from_element(d, d, 1.0 / d as f64)
}

pub fn uniform_row(d: usize) -> RowVec {
    RowVec::from_element(d, 1.0 / d as f64)
}

pub fn basis_row(d: usize, i: usize) -> RowVec {
    let mut e = RowVec::zeros(d);
    e[i] = 1.0;
    e
}

/// Inverse with an infinity-norm condition check.
///
/// Fails with [`Error::SingularSystem`] when the factorization breaks down or
/// `||M|| * ||M^-1|| > 1 / tol_cond`.
pub fn inverse_checked(m: &Mat, tol_cond: f64, layer: i64) -> Result<Mat> {
    let inv = m.clone().lu().try_inverse().ok_or(Error::SingularSystem {
        layer,
        condition: f64::INFINITY,
    })?;
    let condition = row_sum_norm(m) * row_sum_norm(&inv);
    if !condition.is_finite() || condition > 1.0 / tol_cond {
        return Err(Error::SingularSystem { layer, condition });
    }
    Ok(inv)
}

/// Upper bound on the spectral radius via `min_k ||B^k||^(1/k)` over
/// `k = 1, 2, 4, ..., 2^max_log2`.
pub fn spectral_radius_bound(b: &Mat, max_log2: u32) -> f64 {
    let mut power = b.clone();
    let mut best = row_sum_norm(&power);
    let mut k = 1.0;
    for _ in 0..max_log2 {
        power = &power * &power;
        k *= 2.0;
        let n = row_sum_norm(&power);
        if n == 0.0 {
            return 0.0;
        }
        best = best.min(n.powf(1.0 / k));
    }
    best
}

/// Row vector of a matrix row, owned.
pub fn row_of(m: &Mat, i: usize) -> RowVec {
    m.row(i).into_owned()
}

pub fn max_abs_diff(a: &Mat, b: &Mat) -> f64 {
    row_sum_norm(&(a - b))
}
