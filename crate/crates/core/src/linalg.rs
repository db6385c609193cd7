//! Small dense linear-algebra kernels: Cholesky factorisation with optional
//! diagonal jitter, SPD solves and a few matrix reductions.

use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::error::{Error, Result};

/// Largest diagonal jitter added before giving up on a factorisation.
pub const MAX_JITTER: f64 = 1e-10;

/// Lower-triangular Cholesky factor `L` with `A = L Lᵀ`, or `None` when a
/// pivot is not strictly positive.
pub fn cholesky(a: ArrayView2<f64>) -> Option<Array2<f64>> {
    let n = a.nrows();
    debug_assert_eq!(n, a.ncols());
    let mut l = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        let mut d = a[[j, j]];
        for k in 0..j {
            d -= l[[j, k]] * l[[j, k]];
        }
        if !(d > 0.0) || !d.is_finite() {
            return None;
        }
        let d = d.sqrt();
        l[[j, j]] = d;
        for i in (j + 1)..n {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            l[[i, j]] = s / d;
        }
    }
    Some(l)
}

/// Cholesky factor of `A`, retrying once with `MAX_JITTER` on the diagonal.
///
/// Valid but numerically singular correlation matrices (a planted row with
/// `k a² = 1 - ε`, say) land here.
pub fn cholesky_with_jitter(a: ArrayView2<f64>) -> Result<Array2<f64>> {
    if let Some(l) = cholesky(a) {
        return Ok(l);
    }
    let mut shifted = a.to_owned();
    shifted.diag_mut().mapv_inplace(|v| v + MAX_JITTER);
    cholesky(shifted.view()).ok_or_else(|| {
        Error::NotPositiveSemiDefinite(format!(
            "Cholesky factorisation failed even after adding {MAX_JITTER:e} to the diagonal"
        ))
    })
}

/// True when `A + tol·I` admits a Cholesky factor, i.e. the smallest
/// eigenvalue of the symmetric matrix `A` is (numerically) above `-tol`.
pub fn is_psd(a: ArrayView2<f64>, tol: f64) -> bool {
    let mut shifted = a.to_owned();
    shifted.diag_mut().mapv_inplace(|v| v + tol);
    cholesky(shifted.view()).is_some()
}

/// Solves `A X = B` for symmetric positive definite `A` given its lower
/// Cholesky factor.
pub fn cholesky_solve(l: &Array2<f64>, b: ArrayView2<f64>) -> Array2<f64> {
    let n = l.nrows();
    let mut x = b.to_owned();
    for col in 0..x.ncols() {
        // forward: L y = b
        for i in 0..n {
            let mut s = x[[i, col]];
            for k in 0..i {
                s -= l[[i, k]] * x[[k, col]];
            }
            x[[i, col]] = s / l[[i, i]];
        }
        // backward: Lᵀ x = y
        for i in (0..n).rev() {
            let mut s = x[[i, col]];
            for k in (i + 1)..n {
                s -= l[[k, i]] * x[[k, col]];
            }
            x[[i, col]] = s / l[[i, i]];
        }
    }
    x
}

pub fn is_symmetric_exact(a: ArrayView2<f64>) -> bool {
    let n = a.nrows();
    if n != a.ncols() {
        return false;
    }
    (0..n).all(|i| (0..i).all(|j| a[[i, j]].to_bits() == a[[j, i]].to_bits()))
}

/// Column means of an `n × p` matrix.
pub fn column_means(x: ArrayView2<f64>) -> Array1<f64> {
    x.mean_axis(Axis(0)).unwrap_or_else(|| Array1::zeros(x.ncols()))
}

/// `x` with every column shifted to mean zero.
pub fn centered(x: ArrayView2<f64>) -> Array2<f64> {
    let means = column_means(x);
    let mut z = x.to_owned();
    for mut row in z.rows_mut() {
        row -= &means;
    }
    z
}

/// `XᵀX` computed with the blocked kernel behind `ndarray::dot`, then
/// symmetrised bit-exactly from the upper triangle.
pub fn crossprod(x: ArrayView2<f64>) -> Array2<f64> {
    let mut g = x.t().dot(&x);
    symmetrize_from_upper(&mut g);
    g
}

pub fn symmetrize_from_upper(a: &mut Array2<f64>) {
    let n = a.nrows();
    for i in 0..n {
        for j in 0..i {
            a[[i, j]] = a[[j, i]];
        }
    }
}
