//! Small dense linear-algebra kernels.
//!
//! The matrices in this crate are modest (`d <= a few hundred`), so a plain
//! Cholesky factorization and a power iteration cover everything we need
//! without pulling in a LAPACK binding. Deterministic by construction.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Lower-triangular Cholesky factor of a symmetric positive definite matrix.
///
/// Fails with [`Error::NotSpd`] when a pivot is not strictly positive, which
/// is also how callers validate SPD-ness of user-supplied matrices.
pub fn cholesky_lower<T: Scalar>(a: ArrayView2<'_, T>) -> Result<Array2<T>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::Argument(format!(
            "cholesky: matrix is {}x{}, expected square",
            a.nrows(),
            a.ncols()
        )));
    }
    let mut l = Array2::<T>::zeros((n, n));
    for j in 0..n {
        let mut diag = a[(j, j)];
        for k in 0..j {
            diag -= l[(j, k)] * l[(j, k)];
        }
        if !(diag > T::zero()) || !diag.is_finite() {
            return Err(Error::NotSpd(format!(
                "pivot {} is {:?} after elimination",
                j,
                diag.to_f()
            )));
        }
        let root = diag.sqrt();
        l[(j, j)] = root;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / root;
        }
    }
    Ok(l)
}

/// Solve `L L^T x = b` given the lower Cholesky factor `L`.
pub fn cholesky_solve<T: Scalar>(l: &Array2<T>, b: ArrayView1<'_, T>) -> Array1<T> {
    let n = l.nrows();
    debug_assert_eq!(b.len(), n);
    let mut x = b.to_owned();
    // forward: L y = b
    for i in 0..n {
        let mut s = x[i];
        for k in 0..i {
            s -= l[(i, k)] * x[k];
        }
        x[i] = s / l[(i, i)];
    }
    // backward: L^T x = y
    for i in (0..n).rev() {
        let mut s = x[i];
        for k in (i + 1)..n {
            s -= l[(k, i)] * x[k];
        }
        x[i] = s / l[(i, i)];
    }
    x
}

/// Solve `A x = b` for symmetric positive definite `A`.
pub fn solve_spd<T: Scalar>(a: ArrayView2<'_, T>, b: ArrayView1<'_, T>) -> Result<Array1<T>> {
    let l = cholesky_lower(a)?;
    Ok(cholesky_solve(&l, b))
}

/// Upper bound on the spectral norm of `X^T X / m` via power iteration.
///
/// `m` is the row count of `x`; iterating on `v -> X^T (X v) / m` avoids
/// forming the Gram matrix. The result is inflated by 1% so it can serve as
/// a safe Lipschitz estimate (backtracking refines it downward in effect).
pub fn gram_operator_norm<T: Scalar>(x: ArrayView2<'_, T>, iterations: usize) -> T {
    let (m, d) = x.dim();
    if m == 0 || d == 0 {
        return T::zero();
    }
    let inv_m = T::one() / T::from_f(m as f64);
    let mut v = Array1::<T>::from_elem(d, T::one() / T::from_f((d as f64).sqrt()));
    let mut lambda = T::zero();
    for _ in 0..iterations.max(1) {
        let w = x.dot(&v);
        let mut u = x.t().dot(&w);
        u.mapv_inplace(|z| z * inv_m);
        let norm = u.dot(&u).sqrt();
        if norm <= T::zero() || !norm.is_finite() {
            return T::zero();
        }
        lambda = norm;
        v = u / norm;
    }
    lambda * T::from_f(1.01)
}
