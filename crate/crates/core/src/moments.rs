//! Localized moment process
//! `g_i(s0) = r⁻¹ Σ_j K_h(s_j − s0)·z_h(s_j − s0) ⊗ 𝔐(X_i)·(Y_ij − W_ij(s0)ᵀγ(s0))`
//! and its second-moment covariance.
//!
//! Entry `a·q + m` of `g_i` pairs design component `a` (0 = level, 1 = slope)
//! with instrument `m`, so `d = 2q`. Samples are stored "lined up": the
//! `d`-variate function on the grid becomes one row of length `d·r` with
//! column `l·r + j` holding component `l` at `s_j`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::hetero::InstrumentSet;
use crate::io::{CoefficientEstimate, FunctionalDataset};
use crate::kernel::{check_bandwidth, window};
use crate::scalar::Scalar;

/// Per-subject moment functions, lined up as an `n × (d·r)` matrix.
#[derive(Debug, Clone)]
pub struct MomentSample<T: Scalar> {
    pub values: DMatrix<T>,
    pub d: usize,
    pub grid: Grid<T>,
    pub bandwidth: T,
}

impl<T: Scalar> MomentSample<T> {
    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    /// `g_i(s_j)` as a `d`-vector.
    pub fn at(&self, i: usize, j: usize) -> DVector<T> {
        let r = self.grid.len();
        DVector::from_fn(self.d, |l, _| self.values[(i, l * r + j)])
    }

    /// Empirical moment `n⁻¹ Σ_i g_i(s_j)`.
    pub fn mean_at(&self, j: usize) -> DVector<T> {
        let mut acc = DVector::zeros(self.d);
        for i in 0..self.n() {
            acc += self.at(i, j);
        }
        acc / T::from_usize_lossy(self.n())
    }
}

/// `C(s_j, s_j') = n⁻¹ Σ_i g_i(s_j) g_i(s_j')ᵀ`, held as the lined-up
/// `(d·r) × (d·r)` matrix. No mean is subtracted.
#[derive(Debug, Clone)]
pub struct MomentCovariance<T: Scalar> {
    pub matrix: DMatrix<T>,
    pub d: usize,
    pub grid: Grid<T>,
}

impl<T: Scalar> MomentCovariance<T> {
    /// The `d × d` block `C(s_j, s_j')`.
    pub fn block(&self, j: usize, jp: usize) -> DMatrix<T> {
        let r = self.grid.len();
        DMatrix::from_fn(self.d, self.d, |l, lp| self.matrix[(l * r + j, lp * r + jp)])
    }
}

fn check_inputs<T: Scalar>(data: &FunctionalDataset<T>, inst: &InstrumentSet<T>, gamma: &CoefficientEstimate<T>, h: T) -> Result<()> {
    check_bandwidth(h)?;
    if inst.values.nrows() != data.n() {
        return Err(Error::Argument(format!("{} instrument rows for {} subjects", inst.values.nrows(), data.n())));
    }
    if !gamma.grid.same_as(data.grid()) || gamma.p() != data.p() {
        return Err(Error::Argument("coefficient path does not match the dataset grid or covariates".into()));
    }
    Ok(())
}

/// `γ(s0)` rescaled to bandwidth `h`, linearly interpolated between grid points.
fn gamma_at<T: Scalar>(gamma: &CoefficientEstimate<T>, s0: T, h: T) -> (Vec<T>, Vec<T>) {
    let (j, t) = gamma.grid.bracket(s0);
    let ratio = h / gamma.bandwidth;
    let lerp = |m: &DMatrix<T>, k: usize| m[(j, k)] * (T::one() - t) + m[(j + 1, k)] * t;
    let p = gamma.p();
    ((0..p).map(|k| lerp(&gamma.beta, k)).collect(), (0..p).map(|k| lerp(&gamma.dbeta_scaled, k) * ratio).collect())
}

/// Kernel-weighted residual sums `(t0_i, t1_i)` at `s0`, divided by `r`.
fn residual_sums<T: Scalar>(data: &FunctionalDataset<T>, gamma: &CoefficientEstimate<T>, h: T, s0: T) -> (Vec<T>, Vec<T>) {
    let (x, y) = (data.covariates(), data.responses());
    let (b0, b1) = gamma_at(gamma, s0, h);
    let win = window(data.grid().points(), s0, h);
    let rinv = T::one() / T::from_usize_lossy(data.r());
    let mut t0 = vec![T::zero(); data.n()];
    let mut t1 = vec![T::zero(); data.n()];
    for i in 0..data.n() {
        let mut xb0 = T::zero();
        let mut xb1 = T::zero();
        for m in 0..data.p() {
            xb0 += x[(i, m)] * b0[m];
            xb1 += x[(i, m)] * b1[m];
        }
        let (mut a, mut b) = (T::zero(), T::zero());
        for &(j, k, u) in &win {
            let e = y[(i, j)] - xb0 - u * xb1;
            a += k * e;
            b += k * u * e;
        }
        t0[i] = a * rinv;
        t1[i] = b * rinv;
    }
    (t0, t1)
}

/// `g_i(s0)` for every subject, as the columns of a `d × n` matrix.
pub fn moment_eval<T: Scalar>(data: &FunctionalDataset<T>, inst: &InstrumentSet<T>, gamma: &CoefficientEstimate<T>, h: T, s0: T) -> Result<DMatrix<T>> {
    check_inputs(data, inst, gamma, h)?;
    let q = inst.q();
    let (t0, t1) = residual_sums(data, gamma, h, s0);
    Ok(DMatrix::from_fn(2 * q, data.n(), |l, i| {
        let (t, m) = if l < q { (t0[i], l) } else { (t1[i], l - q) };
        inst.values[(i, m)] * t
    }))
}

/// Moment functions of all subjects at all grid points.
pub fn moment_sample<T: Scalar>(data: &FunctionalDataset<T>, inst: &InstrumentSet<T>, gamma: &CoefficientEstimate<T>, h: T) -> Result<MomentSample<T>> {
    check_inputs(data, inst, gamma, h)?;
    let (n, r, q) = (data.n(), data.r(), inst.q());
    let d = 2 * q;
    let sums: Vec<(Vec<T>, Vec<T>)> = data.grid().points().par_iter().map(|&s0| residual_sums(data, gamma, h, s0)).collect();
    let mut values = DMatrix::zeros(n, d * r);
    for (j, (t0, t1)) in sums.iter().enumerate() {
        for i in 0..n {
            for m in 0..q {
                let z = inst.values[(i, m)];
                values[(i, m * r + j)] = z * t0[i];
                values[(i, (q + m) * r + j)] = z * t1[i];
            }
        }
    }
    Ok(MomentSample { values, d, grid: data.grid().clone(), bandwidth: h })
}

pub fn moment_covariance<T: Scalar>(samples: &MomentSample<T>) -> Result<MomentCovariance<T>> {
    let n = samples.n();
    if n < 2 {
        return Err(Error::Invalid(format!("covariance needs at least 2 subjects, got {n}")));
    }
    let g = &samples.values;
    let matrix = g.tr_mul(g) / T::from_usize_lossy(n);
    Ok(MomentCovariance { matrix, d: samples.d, grid: samples.grid.clone() })
}
