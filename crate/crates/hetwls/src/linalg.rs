//! Shared dense linear algebra: the weighted least-squares solver used by every
//! estimator in this crate, plus a few small matrix helpers.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Reciprocal condition number below which a design is treated as singular.
pub const RCOND_TOLERANCE: f64 = 1e-12;

/// Minimize `sum_i w_i (y_i - x_i^T beta)^2` for strictly positive weights.
///
/// The rows of `x` and `y` are scaled by `sqrt(w_i)` and the resulting ordinary
/// least-squares problem is solved through a column-pivoted QR decomposition, so
/// the condition number of the design is never squared. Weights are normalized
/// by their maximum first; the minimizer is invariant under rescaling of `w`,
/// and normalization keeps the scaled system well ranged even for weights like
/// `sigma^-2` with tiny sigmas.
pub fn weighted_least_squares(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    w: &DVector<f64>,
) -> Result<DVector<f64>> {
    let (n, p) = x.shape();
    debug_assert_eq!(y.len(), n);
    debug_assert_eq!(w.len(), n);

    let w_max = w.max();
    let scale = DVector::from_iterator(n, w.iter().map(|wi| (wi / w_max).sqrt()));

    let mut xs = x.clone();
    for i in 0..n {
        for j in 0..p {
            xs[(i, j)] *= scale[i];
        }
    }
    let ys = y.component_mul(&scale);

    let qr = xs.col_piv_qr();
    let r = qr.r();
    check_rcond(&r)?;

    // Least squares through the thin factorization: solve R z = Q^T y, undo the
    // column permutation afterwards.
    let mut z = qr.q().transpose() * ys;
    if !r.rows(0, p).solve_upper_triangular_mut(&mut z) {
        return Err(Error::SingularDesign(RCOND_TOLERANCE));
    }
    qr.p().inv_permute_rows(&mut z);
    Ok(z)
}

/// Reciprocal-condition check on the diagonal of the pivoted `R` factor.
pub(crate) fn check_rcond(r: &DMatrix<f64>) -> Result<()> {
    let k = r.nrows().min(r.ncols());
    let mut lo = f64::INFINITY;
    let mut hi = 0.0_f64;
    for i in 0..k {
        let d = r[(i, i)].abs();
        lo = lo.min(d);
        hi = hi.max(d);
    }
    if hi == 0.0 || lo / hi < RCOND_TOLERANCE {
        return Err(Error::SingularDesign(RCOND_TOLERANCE));
    }
    Ok(())
}

/// `n * (X^T X)^-1` computed from a column-pivoted QR of `X`, without forming
/// the normal equations.
pub(crate) fn scaled_gram_inverse(x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (n, p) = x.shape();
    let qr = x.clone().col_piv_qr();
    let r = qr.r();
    check_rcond(&r)?;

    // (X^T X)^-1 = P R^-1 R^-T P^T with X P = Q R.
    let r_inv = r
        .rows(0, p)
        .clone_owned()
        .solve_upper_triangular(&DMatrix::identity(p, p))
        .ok_or(Error::SingularDesign(RCOND_TOLERANCE))?;
    let mut m = &r_inv * r_inv.transpose();
    qr.p().inv_permute_rows(&mut m);
    qr.p().inv_permute_columns(&mut m);
    Ok(symmetrized(&(m * n as f64)))
}

/// `(m + m^T) / 2`, removing round-off asymmetry before inversion or quantiles.
pub fn symmetrized(m: &DMatrix<f64>) -> DMatrix<f64> {
    0.5 * (m + m.transpose())
}

/// Weighted residual sum of squares `(y - X beta)^T W (y - X beta)`.
pub fn weighted_rss(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    w: &DVector<f64>,
    beta: &DVector<f64>,
) -> f64 {
    let resid = y - x * beta;
    resid.iter().zip(w.iter()).map(|(r, wi)| wi * r * r).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_weights_mean() {
        let x = DMatrix::from_column_slice(3, 1, &[1.0, 1.0, 1.0]);
        let y = DVector::from_column_slice(&[1.0, 2.0, 3.0]);
        let w = DVector::from_element(3, 1.0);
        let beta = weighted_least_squares(&x, &y, &w).unwrap();
        assert!((beta[0] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn pivoting_keeps_coefficient_order() {
        // Columns with very different scales force a pivot swap.
        let x = DMatrix::from_row_slice(
            4,
            2,
            &[
                1.0, 1000.0, //
                1.0, 2000.0, //
                1.0, 3000.0, //
                1.0, 4000.0,
            ],
        );
        let y = DVector::from_fn(4, |i, _| 2.0 + 0.5 * 1000.0 * (i as f64 + 1.0));
        let w = DVector::from_element(4, 1.0);
        let beta = weighted_least_squares(&x, &y, &w).unwrap();
        assert!((beta[0] - 2.0).abs() < 1e-9, "intercept {}", beta[0]);
        assert!((beta[1] - 0.5).abs() < 1e-12, "slope {}", beta[1]);
    }

    #[test]
    fn duplicate_column_is_singular() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 1.0, 2.0, 2.0, 3.0, 3.0]);
        let y = DVector::from_column_slice(&[1.0, 2.0, 3.0]);
        let w = DVector::from_element(3, 1.0);
        assert!(matches!(
            weighted_least_squares(&x, &y, &w),
            Err(Error::SingularDesign(_))
        ));
    }

    #[test]
    fn gram_inverse_of_identity() {
        let x = DMatrix::identity(2, 2);
        let b = scaled_gram_inverse(&x).unwrap();
        assert!((b[(0, 0)] - 2.0).abs() < 1e-14);
        assert!((b[(1, 1)] - 2.0).abs() < 1e-14);
        assert!(b[(0, 1)].abs() < 1e-14);
    }
}
