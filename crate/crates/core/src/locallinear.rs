//! Initial local-linear least-squares estimator and k-fold bandwidth choice.
//!
//! At each `s0` the estimator solves `lhs·γ = rhs` with
//! `W_ij = z_h(s_j − s0) ⊗ X_i`, so `γ = (β(s0), h·β̇(s0))` and entry
//! `a·p + m` pairs design component `a` with covariate `m`. Both sides only
//! need `Σ_i X_i X_iᵀ` and `Σ_i X_i Y_ij`, which is what [`LleStats`] caches.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;

use crate::config::EstimatorConfig;
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::io::{CoefficientEstimate, FunctionalDataset};
use crate::kernel::{check_bandwidth, window, window_moments};
use crate::linalg::solve_spd;
use crate::scalar::Scalar;

pub use crate::config::default_bandwidth_grid;

pub(crate) const DEFAULT_JITTER: f64 = 1e-10;

/// Normal equations of the local fit at `s0`, scaled by `1/(nr)`.
#[derive(Debug, Clone)]
pub struct LocalSystem<T: Scalar> {
    pub lhs: DMatrix<T>,
    pub rhs: DVector<T>,
    pub s0: T,
}

/// `Σ_i X_i X_iᵀ` (`p × p`) and `Σ_i X_i Y_ij` (`r × p`) over a subject set.
#[derive(Debug, Clone)]
pub struct LleStats<T: Scalar> {
    sxx: DMatrix<T>,
    sxy: DMatrix<T>,
    n: usize,
}

impl<T: Scalar> LleStats<T> {
    pub fn new(data: &FunctionalDataset<T>, rows: &[usize]) -> Self {
        let x = data.covariates().select_rows(rows.iter());
        let y = data.responses().select_rows(rows.iter());
        LleStats { sxx: x.transpose() * &x, sxy: y.transpose() * &x, n: rows.len() }
    }

    pub fn full(data: &FunctionalDataset<T>) -> Self {
        let x = data.covariates();
        LleStats { sxx: x.transpose() * x, sxy: data.responses().transpose() * x, n: data.n() }
    }

    pub fn system(&self, grid: &Grid<T>, s0: T, h: T) -> Result<LocalSystem<T>> {
        check_bandwidth(h)?;
        let win = window(grid.points(), s0, h);
        if win.is_empty() {
            return Err(Error::EmptyWindow { s0: s0.as_f64(), h: h.as_f64() });
        }
        let p = self.sxx.nrows();
        let scale = T::one() / (T::from_usize_lossy(self.n) * T::from_usize_lossy(grid.len()));
        let a = window_moments(&win);
        let mut lhs = DMatrix::zeros(2 * p, 2 * p);
        for r in 0..p {
            for c in 0..p {
                let v = self.sxx[(r, c)] * scale;
                lhs[(r, c)] = a[0] * v;
                lhs[(r, p + c)] = a[1] * v;
                lhs[(p + r, c)] = a[1] * v;
                lhs[(p + r, p + c)] = a[2] * v;
            }
        }
        let mut rhs = DVector::zeros(2 * p);
        for &(j, k, u) in &win {
            for m in 0..p {
                let t = self.sxy[(j, m)];
                rhs[m] += k * t;
                rhs[p + m] += k * u * t;
            }
        }
        rhs *= scale;
        Ok(LocalSystem { lhs, rhs, s0 })
    }

    pub(crate) fn solve_at(&self, grid: &Grid<T>, s0: T, h: T, jitter: T) -> Result<DVector<T>> {
        let sys = self.system(grid, s0, h)?;
        solve_spd(&sys.lhs, &sys.rhs, jitter, s0)
    }

    /// Estimate at every grid point.
    pub fn curve(&self, grid: &Grid<T>, h: T, jitter: T) -> Result<CoefficientEstimate<T>> {
        let p = self.sxx.nrows();
        let r = grid.len();
        let mut beta = DMatrix::zeros(r, p);
        let mut dbeta = DMatrix::zeros(r, p);
        for (j, &s0) in grid.points().iter().enumerate() {
            let g = self.solve_at(grid, s0, h, jitter)?;
            for m in 0..p {
                beta[(j, m)] = g[m];
                dbeta[(j, m)] = g[p + m];
            }
        }
        CoefficientEstimate::new(grid.clone(), beta, dbeta, h)
    }
}

/// Normal equations of the local-linear fit at `s0`.
pub fn local_system<T: Scalar>(data: &FunctionalDataset<T>, s0: T, h: T) -> Result<LocalSystem<T>> {
    LleStats::full(data).system(data.grid(), s0, h)
}

/// `(β̆(s0), h·β̇̆(s0))`.
pub fn lle_at<T: Scalar>(data: &FunctionalDataset<T>, s0: T, h: T) -> Result<(DVector<T>, DVector<T>)> {
    let g = LleStats::full(data).solve_at(data.grid(), s0, h, T::lit(DEFAULT_JITTER))?;
    let p = data.p();
    Ok((g.rows(0, p).into_owned(), g.rows(p, p).into_owned()))
}

pub fn lle_curve<T: Scalar>(data: &FunctionalDataset<T>, h: T) -> Result<CoefficientEstimate<T>> {
    lle_curve_with(data, h, T::lit(DEFAULT_JITTER))
}

pub fn lle_curve_with<T: Scalar>(data: &FunctionalDataset<T>, h: T, jitter: T) -> Result<CoefficientEstimate<T>> {
    LleStats::full(data).curve(data.grid(), h, jitter)
}

/// A curve estimator that cross-validation can refit on subject subsets.
///
/// `prepare` runs once per fold and may cache anything that does not depend
/// on the bandwidth; `beta` returns the `r × p` coefficient path.
pub trait FoldFit<T: Scalar>: Sync {
    type Prepared: Send + Sync;
    fn prepare(&self, train: &[usize]) -> Result<Self::Prepared>;
    fn beta(&self, prepared: &Self::Prepared, h: T) -> Result<DMatrix<T>>;
}

/// Local-linear least squares as a [`FoldFit`].
pub struct LleFit<'a, T: Scalar> {
    pub data: &'a FunctionalDataset<T>,
    pub jitter: T,
}

impl<T: Scalar> FoldFit<T> for LleFit<'_, T> {
    type Prepared = LleStats<T>;
    fn prepare(&self, train: &[usize]) -> Result<LleStats<T>> {
        Ok(LleStats::new(self.data, train))
    }
    fn beta(&self, stats: &LleStats<T>, h: T) -> Result<DMatrix<T>> {
        Ok(stats.curve(self.data.grid(), h, self.jitter)?.beta)
    }
}

/// Wraps a closure `(training rows, h) → estimate` as a [`FoldFit`].
pub struct FnFit<F>(pub F);

impl<T, F> FoldFit<T> for FnFit<F>
where
    T: Scalar,
    F: Fn(&[usize], T) -> Result<CoefficientEstimate<T>> + Sync,
{
    type Prepared = Vec<usize>;
    fn prepare(&self, train: &[usize]) -> Result<Vec<usize>> {
        Ok(train.to_vec())
    }
    fn beta(&self, train: &Vec<usize>, h: T) -> Result<DMatrix<T>> {
        Ok((self.0)(train, h)?.beta)
    }
}

/// Fold label per subject: a seeded shuffle followed by round-robin dealing.
pub fn fold_assignment(n: usize, folds: usize, seed: u64) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha20Rng::seed_from_u64(seed));
    let mut fold = vec![0; n];
    for (k, &i) in perm.iter().enumerate() {
        fold[i] = k % folds;
    }
    fold
}

fn fold_rows(fold: &[usize], f: usize) -> (Vec<usize>, Vec<usize>) {
    (0..fold.len()).partition(|&i| fold[i] != f)
}

fn held_out_sse<T: Scalar>(data: &FunctionalDataset<T>, test: &[usize], beta: &DMatrix<T>) -> T {
    let x = data.covariates();
    let y = data.responses();
    let mut sse = T::zero();
    for &i in test {
        for j in 0..data.r() {
            let mut pred = T::zero();
            for m in 0..data.p() {
                pred += x[(i, m)] * beta[(j, m)];
            }
            let e = y[(i, j)] - pred;
            sse += e * e;
        }
    }
    sse
}

fn prepare_folds<T: Scalar, F: FoldFit<T>>(fold: &[usize], folds: usize, fitter: &F) -> Result<Vec<(F::Prepared, Vec<usize>)>> {
    (0..folds)
        .into_par_iter()
        .map(|f| {
            let (train, test) = fold_rows(fold, f);
            Ok((fitter.prepare(&train)?, test))
        })
        .collect()
}

fn score_prepared<T: Scalar, F: FoldFit<T>>(data: &FunctionalDataset<T>, prepared: &[(F::Prepared, Vec<usize>)], fitter: &F, h: T) -> Result<T> {
    let mut sse = T::zero();
    for (prep, test) in prepared {
        if test.is_empty() {
            continue;
        }
        let beta = fitter.beta(prep, h)?;
        sse += held_out_sse(data, test, &beta);
    }
    Ok(sse / (T::from_usize_lossy(data.n()) * T::from_usize_lossy(data.r())))
}

/// Cross-validated prediction error `Σ_{i,j}(Y_ij − X_iᵀβ̂^{−fold(i)}(s_j))²/(nr)`.
pub fn cv_score<T: Scalar, F: FoldFit<T>>(data: &FunctionalDataset<T>, fold: &[usize], folds: usize, fitter: &F, h: T) -> Result<T> {
    let prepared = prepare_folds(fold, folds, fitter)?;
    score_prepared(data, &prepared, fitter, h)
}

/// Bandwidth minimizing [`cv_score`] over `config.bandwidth_grid`. Ties go to
/// the larger bandwidth and candidates that cannot be fitted are skipped.
pub fn cv_bandwidth<T: Scalar, F: FoldFit<T>>(data: &FunctionalDataset<T>, config: &EstimatorConfig<T>, fitter: &F) -> Result<T> {
    Ok(cv_search(data, config, fitter)?.0)
}

/// Like [`cv_bandwidth`] but also returns the score of every candidate
/// (`None` where the fit failed).
pub fn cv_search<T: Scalar, F: FoldFit<T>>(data: &FunctionalDataset<T>, config: &EstimatorConfig<T>, fitter: &F) -> Result<(T, Vec<Option<T>>)> {
    config.validate(data.n())?;
    let fold = fold_assignment(data.n(), config.cv_folds, config.seed);
    let prepared = prepare_folds(&fold, config.cv_folds, fitter)?;
    let scores: Vec<Option<T>> = config
        .bandwidth_grid
        .par_iter()
        .map(|&h| score_prepared(data, &prepared, fitter, h).ok().filter(|s| s.is_finite()))
        .collect();
    let mut best: Option<(T, T)> = None;
    for (&h, s) in config.bandwidth_grid.iter().zip(&scores) {
        if let Some(s) = *s {
            best = match best {
                Some((bs, bh)) if s > bs || (s == bs && h <= bh) => Some((bs, bh)),
                _ => Some((s, h)),
            };
        }
    }
    match best {
        Some((_, h)) => Ok((h, scores)),
        None => Err(Error::NoFeasibleBandwidth { candidates: config.bandwidth_grid.len() }),
    }
}
