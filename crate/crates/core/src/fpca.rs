//! Eigen-decomposition of the moment covariance by lining up: the
//! `d`-variate moment function on `r` grid points is treated as one function
//! on `d·r` points, and the Fredholm equation
//! `Σ_{l',j'} C_{l,l'}(s_j, s_j')·φ_{l'}(s_j')·w_j' = λ·φ_l(s_j)` is solved with
//! trapezoid weights `w`. Eigenfunctions are orthonormal in the integral
//! sense `Σ_l ∫φ_{k,l}φ_{k',l} = 1(k = k')`.
//!
//! The covariance estimate converges at rates that depend on the bandwidth
//! (`δ_{n1}(h)`, `δ_{n2}(h)` in the asymptotic analysis); nothing here checks
//! them.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::linalg::sorted_eigen;
use crate::moments::{MomentCovariance, MomentSample};
use crate::scalar::Scalar;

/// Eigenpairs retained from the lined-up decomposition.
#[derive(Debug, Clone)]
pub struct EigenSystem<T: Scalar> {
    /// Positive eigenvalues, descending.
    pub eigenvalues: Vec<T>,
    /// Lined-up eigenfunctions, one per column, `(d·r) × K`.
    pub phi: DMatrix<T>,
    pub d: usize,
    pub grid: Grid<T>,
    /// Smallest raw eigenvalue before dropping (only known on the direct route).
    pub min_raw_eigenvalue: Option<T>,
    pub kappa0: Option<usize>,
    pub alpha: Option<T>,
}

/// Eigenvalues below this fraction of the largest are dropped.
pub const RELATIVE_CUTOFF: f64 = 1e-12;
/// Floor of the ridge relative to `λ_1²`.
pub const ALPHA_FLOOR: f64 = 1e-8;

impl<T: Scalar> EigenSystem<T> {
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }
    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    /// `φ_k` as a `d × r` matrix.
    pub fn eigenfunction(&self, k: usize) -> DMatrix<T> {
        let r = self.grid.len();
        DMatrix::from_fn(self.d, r, |l, j| self.phi[(l * r + j, k)])
    }

    /// `φ_k(s0)`, linear between grid points and constant beyond the ends.
    pub fn phi_at(&self, k: usize, s0: T) -> DVector<T> {
        let r = self.grid.len();
        let (j, t) = self.grid.bracket(s0);
        DVector::from_fn(self.d, |l, _| self.phi[(l * r + j, k)] * (T::one() - t) + self.phi[(l * r + j + 1, k)] * t)
    }

    /// Spectral weights `λ_k/(λ_k² + α)`.
    pub fn weights(&self) -> Result<Vec<T>> {
        let alpha = self.alpha.ok_or_else(|| Error::Argument("truncation not selected; call select_truncation".into()))?;
        Ok(self.eigenvalues.iter().map(|&l| l / (l * l + alpha)).collect())
    }

    /// Creates a system from explicit eigenpairs, e.g. for testing the GMM
    /// step with chosen weights.
    pub fn from_parts(eigenvalues: Vec<T>, phi: DMatrix<T>, d: usize, grid: Grid<T>) -> Result<Self> {
        if phi.nrows() != d * grid.len() || phi.ncols() != eigenvalues.len() {
            return Err(Error::Dimension(format!("phi is {:?}, expected ({}, {})", phi.shape(), d * grid.len(), eigenvalues.len())));
        }
        Ok(EigenSystem { eigenvalues, phi, d, grid, min_raw_eigenvalue: None, kappa0: None, alpha: None })
    }
}

fn sqrt_weights<T: Scalar>(grid: &Grid<T>, d: usize) -> Vec<T> {
    let w = grid.quadrature_weights();
    (0..d).flat_map(|_| w.iter().map(|v| v.sqrt())).collect()
}

/// Keeps eigenpairs above the cutoff, unscales by `√w` and fixes signs.
fn finish<T: Scalar>(vals: Vec<T>, vecs: DMatrix<T>, sw: &[T], d: usize, grid: &Grid<T>, min_raw: Option<T>) -> EigenSystem<T> {
    let top = vals.first().copied().unwrap_or(T::zero());
    let keep: Vec<usize> = if top > T::zero() {
        vals.iter().enumerate().filter(|(_, &v)| v > T::lit(RELATIVE_CUTOFF) * top).map(|(k, _)| k).collect()
    } else {
        Vec::new()
    };
    let mut phi = DMatrix::zeros(sw.len(), keep.len());
    for (c, &k) in keep.iter().enumerate() {
        let mut col: DVector<T> = vecs.column(k).into_owned();
        // Sign rule: the first entry of largest magnitude is nonnegative.
        let mut arg = 0;
        for i in 1..col.len() {
            if col[i].abs() > col[arg].abs() {
                arg = i;
            }
        }
        if col[arg] < T::zero() {
            col = -col;
        }
        for i in 0..sw.len() {
            phi[(i, c)] = col[i] / sw[i];
        }
    }
    EigenSystem {
        eigenvalues: keep.iter().map(|&k| vals[k]).collect(),
        phi,
        d,
        grid: grid.clone(),
        min_raw_eigenvalue: min_raw,
        kappa0: None,
        alpha: None,
    }
}

/// Decomposes a covariance given as the lined-up matrix.
pub fn lineup_eigen<T: Scalar>(cov: &MomentCovariance<T>) -> Result<EigenSystem<T>> {
    let m = &cov.matrix;
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Invalid("non-finite covariance entry".into()));
    }
    if m.nrows() != cov.d * cov.grid.len() || !m.is_square() {
        return Err(Error::Dimension(format!("covariance is {:?} for d = {} and r = {}", m.shape(), cov.d, cov.grid.len())));
    }
    let sw = sqrt_weights(&cov.grid, cov.d);
    let half = T::lit(0.5);
    let a = DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| half * (m[(i, j)] + m[(j, i)]) * sw[i] * sw[j]);
    let (vals, vecs) = sorted_eigen(a);
    let min_raw = vals.last().copied();
    Ok(finish(vals, vecs, &sw, cov.d, &cov.grid, min_raw))
}

/// Same decomposition computed from the moment sample without forming the
/// `(d·r)²` covariance. When `n < d·r` the `n × n` Gram matrix is decomposed
/// instead and its eigenvectors mapped back.
pub fn lineup_eigen_from_sample<T: Scalar>(sample: &MomentSample<T>) -> Result<EigenSystem<T>> {
    let g = &sample.values;
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::Invalid("non-finite moment value".into()));
    }
    let n = sample.n();
    if n < 2 {
        return Err(Error::Invalid(format!("covariance needs at least 2 subjects, got {n}")));
    }
    let sw = sqrt_weights(&sample.grid, sample.d);
    let dim = sw.len();
    if dim <= n {
        return lineup_eigen(&crate::moments::moment_covariance(sample)?);
    }
    let rn = T::one() / T::from_usize_lossy(n).sqrt();
    let z = DMatrix::from_fn(n, dim, |i, c| g[(i, c)] * sw[c] * rn);
    let (mu, v) = sorted_eigen(&z * z.transpose());
    let top = mu.first().copied().unwrap_or(T::zero());
    let mut vals = Vec::new();
    let mut vecs = Vec::new();
    for (k, &m) in mu.iter().enumerate() {
        if !(top > T::zero()) || m <= T::lit(RELATIVE_CUTOFF) * top {
            break;
        }
        let u = z.tr_mul(&v.column(k)) / m.sqrt();
        vals.push(m);
        vecs.push(u);
    }
    let vecs = if vecs.is_empty() { DMatrix::zeros(dim, 0) } else { DMatrix::from_columns(&vecs) };
    Ok(finish(vals, vecs, &sw, sample.d, &sample.grid, None))
}

/// Sets `κ0` (smallest count reaching the variance fraction `fve`) and the
/// ridge `α = max(λ_{κ0+1}², 1e−8·λ_1²)`, with `λ_{κ0+1} = 0` when absent.
pub fn select_truncation<T: Scalar>(eig: &EigenSystem<T>, fve: T) -> Result<EigenSystem<T>> {
    let total = eig.eigenvalues.iter().fold(T::zero(), |a, &b| a + b);
    if !(total > T::zero()) {
        return Err(Error::DegenerateCovariance("all eigenvalues are zero".into()));
    }
    let mut cum = T::zero();
    let mut kappa0 = eig.len();
    for (k, &l) in eig.eigenvalues.iter().enumerate() {
        cum += l;
        if cum / total >= fve {
            kappa0 = k + 1;
            break;
        }
    }
    let next = eig.eigenvalues.get(kappa0).copied().unwrap_or(T::zero());
    let l1 = eig.eigenvalues[0];
    let alpha = (next * next).max(T::lit(ALPHA_FLOOR) * l1 * l1);
    let mut out = eig.clone();
    out.kappa0 = Some(kappa0);
    out.alpha = Some(alpha);
    Ok(out)
}
