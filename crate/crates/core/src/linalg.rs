use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Cholesky factorization with a relative pivot check: the smallest squared
/// pivot must exceed `tol` times the largest diagonal entry.
fn checked_cholesky<T: Scalar>(a: &DMatrix<T>, tol: T) -> Option<Cholesky<T, nalgebra::Dyn>> {
    let dmax = a.diagonal().iter().fold(T::zero(), |m, &v| m.max(v.abs()));
    if !(dmax > T::zero()) || !dmax.is_finite() {
        return None;
    }
    let ch = Cholesky::new(a.clone())?;
    let l = ch.l_dirty();
    let pmin = (0..a.nrows()).map(|i| l[(i, i)] * l[(i, i)]).fold(dmax, |m, v| m.min(v));
    (pmin > tol * dmax).then_some(ch)
}

/// Ratio of extreme eigenvalue magnitudes, `∞` when the smallest is zero.
pub(crate) fn condition_estimate<T: Scalar>(a: &DMatrix<T>) -> f64 {
    if a.iter().any(|v| !v.is_finite()) {
        return f64::INFINITY;
    }
    let ev = SymmetricEigen::new(a.clone()).eigenvalues;
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for v in ev.iter() {
        let v = v.as_f64().abs();
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if lo == 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// Solves the symmetric positive (semi)definite system `a·x = b`.
///
/// A plain Cholesky solve is tried first. If it fails the pivot check,
/// `jitter·trace(a)/dim` is added to the diagonal and the solve retried once.
pub(crate) fn solve_spd<T: Scalar>(a: &DMatrix<T>, b: &DVector<T>, jitter: T, s0: T) -> Result<DVector<T>> {
    let tol = T::pivot_tolerance();
    if let Some(ch) = checked_cholesky(a, tol) {
        return Ok(ch.solve(b));
    }
    let dim = a.nrows();
    let ridge = jitter * a.trace() / T::from_usize_lossy(dim);
    if ridge > T::zero() && ridge.is_finite() {
        let mut aj = a.clone();
        for i in 0..dim {
            aj[(i, i)] += ridge;
        }
        if let Some(ch) = checked_cholesky(&aj, tol) {
            return Ok(ch.solve(b));
        }
    }
    Err(Error::Singular { s0: s0.as_f64(), condition: condition_estimate(a) })
}

/// Symmetric eigen-decomposition sorted by descending eigenvalue.
pub(crate) fn sorted_eigen<T: Scalar>(m: DMatrix<T>) -> (Vec<T>, DMatrix<T>) {
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap_or(std::cmp::Ordering::Equal));
    let vals = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let vecs = eig.eigenvectors.select_columns(order.iter());
    (vals, vecs)
}
