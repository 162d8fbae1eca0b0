//! Integrated squared residuals, a nonparametric model for their
//! conditional variance, and the instruments `[X, X/σ̂²(X)]` built from it.
//!
//! The variance model regresses `log R_i` on the covariates by local-linear
//! kernel regression with a product Epanechnikov kernel. Taking logs
//! introduces a multiplicative bias (`E log R ≠ log E R`); only the shape of
//! `σ̂²` matters for the instruments, so it is left uncorrected.

use nalgebra::{DMatrix, DVector};

use crate::config::EstimatorConfig;
use crate::error::{Error, Result};
use crate::grid::trapezoid_integrate;
use crate::io::{CoefficientEstimate, FunctionalDataset};
use crate::kernel::kernel_eval;
use crate::scalar::Scalar;

/// `R_i = ∫(Y_i(s) − X_iᵀβ̆(s))² ds`, clamped below at
/// `variance_floor·1e−3·mean(R)` (or `variance_floor·1e−3` if every `R_i` is
/// zero) so the logarithm stays finite.
pub fn integrated_sq_residuals<T: Scalar>(data: &FunctionalDataset<T>, init: &CoefficientEstimate<T>, variance_floor: T) -> Result<Vec<T>> {
    if !init.grid.same_as(data.grid()) || init.p() != data.p() {
        return Err(Error::Dimension("initial estimate does not match the dataset grid or covariates".into()));
    }
    let (x, y) = (data.covariates(), data.responses());
    let mut out = Vec::with_capacity(data.n());
    let mut sq = vec![T::zero(); data.r()];
    for i in 0..data.n() {
        for (j, v) in sq.iter_mut().enumerate() {
            let mut pred = T::zero();
            for m in 0..data.p() {
                pred += x[(i, m)] * init.beta[(j, m)];
            }
            let e = y[(i, j)] - pred;
            *v = e * e;
        }
        out.push(trapezoid_integrate(&sq, data.grid())?);
    }
    let mean = mean(&out);
    let scale = if mean > T::zero() { mean } else { T::one() };
    let clamp = variance_floor * T::lit(1e-3) * scale;
    for v in &mut out {
        *v = v.max(clamp);
    }
    Ok(out)
}

fn mean<T: Scalar>(v: &[T]) -> T {
    v.iter().fold(T::zero(), |a, &b| a + b) / T::from_usize_lossy(v.len().max(1))
}

fn sample_sd<T: Scalar>(v: impl Iterator<Item = T> + Clone) -> T {
    let n = v.clone().count();
    let m = v.clone().fold(T::zero(), |a, b| a + b) / T::from_usize_lossy(n);
    let ss = v.fold(T::zero(), |a, b| a + (b - m) * (b - m));
    (ss / T::from_usize_lossy(n - 1)).sqrt()
}

const MAX_WIDENINGS: usize = 60;

/// Fitted conditional variance `σ̂²(X_i)` of the integrated residuals.
#[derive(Debug, Clone)]
pub struct VarianceModel<T: Scalar> {
    x: DMatrix<T>,
    log_r: Vec<T>,
    /// Kernel bandwidth per covariate; `None` for coordinates without spread.
    bandwidths: Vec<Option<T>>,
    fitted: Vec<T>,
    floor: T,
    scale: T,
    constant_fallback: bool,
}

impl<T: Scalar> VarianceModel<T> {
    pub fn fitted(&self) -> &[T] {
        &self.fitted
    }
    pub fn floor(&self) -> T {
        self.floor
    }
    pub fn bandwidths(&self) -> &[Option<T>] {
        &self.bandwidths
    }
    /// True when the covariates had no spread and a constant was fitted.
    pub fn constant_fallback(&self) -> bool {
        self.constant_fallback
    }

    /// `σ̂²` at a new covariate vector.
    pub fn predict(&self, x0: &[T]) -> Result<T> {
        if x0.len() != self.x.ncols() {
            return Err(Error::Dimension(format!("expected {} covariates, got {}", self.x.ncols(), x0.len())));
        }
        let mu = if self.constant_fallback { mean(&self.log_r) } else { self.local_log(x0) };
        Ok((mu.exp() * self.scale).max(self.floor))
    }

    /// Copy rescaled so the fitted values average to one. Instruments only
    /// depend on the direction of `1/σ̂²`, and the unit mean makes the
    /// pipeline equivariant to rescaling the responses.
    pub fn normalized(&self) -> Self {
        let m = mean(&self.fitted);
        let mut out = self.clone();
        if m > T::zero() {
            out.fitted.iter_mut().for_each(|v| *v /= m);
            out.floor /= m;
            out.scale /= m;
        }
        out
    }

    /// Local-linear fit of `log R` at `x0`, widening bandwidths by 1.5 until
    /// the local system is well posed.
    fn local_log(&self, x0: &[T]) -> T {
        let active: Vec<(usize, T)> = self.bandwidths.iter().enumerate().filter_map(|(k, b)| b.map(|b| (k, b))).collect();
        let q = active.len() + 1;
        let n = self.x.nrows();
        let mut widen = T::one();
        for _ in 0..MAX_WIDENINGS {
            let mut a = DMatrix::<T>::zeros(q, q);
            let mut rhs = DVector::<T>::zeros(q);
            let mut support = 0usize;
            let mut z = vec![T::zero(); q];
            z[0] = T::one();
            for i in 0..n {
                let mut w = T::one();
                for (c, &(k, b)) in active.iter().enumerate() {
                    let u = (self.x[(i, k)] - x0[k]) / (b * widen);
                    w *= kernel_eval(u);
                    z[c + 1] = u;
                }
                if w <= T::zero() {
                    continue;
                }
                support += 1;
                for r in 0..q {
                    rhs[r] += w * z[r] * self.log_r[i];
                    for c in 0..q {
                        a[(r, c)] += w * z[r] * z[c];
                    }
                }
            }
            if support > q {
                if let Some(sol) = well_posed_solve(&a, &rhs) {
                    return sol[0];
                }
            }
            widen *= T::lit(1.5);
        }
        mean(&self.log_r)
    }
}

/// Cholesky solve accepted only if every squared pivot exceeds `1e−10` of the
/// largest diagonal entry.
fn well_posed_solve<T: Scalar>(a: &DMatrix<T>, b: &DVector<T>) -> Option<DVector<T>> {
    let dmax = a.diagonal().iter().fold(T::zero(), |m, &v| m.max(v));
    let ch = nalgebra::Cholesky::new(a.clone())?;
    let l = ch.l_dirty();
    let ok = (0..a.nrows()).all(|i| l[(i, i)] * l[(i, i)] > T::lit(1e-10) * dmax);
    ok.then(|| ch.solve(b))
}

/// Fits `log R_i = μ(X_i) + ε_i` and returns `σ̂²(X_i) = max(exp μ̂(X_i), floor)`
/// with `floor = variance_floor·mean(R)`.
///
/// Per-coordinate bandwidths follow `1.06·sd·n^{−1/(4+p)}`. Coordinates with
/// zero spread are left out of the kernel; if none has spread the model is the
/// constant `exp(mean log R)`.
pub fn fit_variance<T: Scalar>(x: &DMatrix<T>, r: &[T], config: &EstimatorConfig<T>) -> Result<VarianceModel<T>> {
    let (n, p) = x.shape();
    if r.len() != n {
        return Err(Error::Dimension(format!("{} residual integrals for {n} subjects", r.len())));
    }
    if n < 3 {
        return Err(Error::Argument(format!("variance model needs at least 3 subjects, got {n}")));
    }
    if let Some(v) = r.iter().find(|v| !(**v > T::zero()) || !v.is_finite()) {
        return Err(Error::Invalid(format!("integrated residual {:e} is not positive", v)));
    }
    let rate = T::from_usize_lossy(n).powf(-T::one() / T::from_usize_lossy(4 + p));
    let bandwidths: Vec<Option<T>> = (0..p)
        .map(|k| {
            let sd = sample_sd(x.column(k).iter().copied());
            (sd > T::zero() && sd.is_finite()).then(|| T::lit(1.06) * sd * rate)
        })
        .collect();
    let constant_fallback = bandwidths.iter().all(Option::is_none);
    let floor = config.variance_floor * mean(r);
    let mut model = VarianceModel {
        x: x.clone(),
        log_r: r.iter().map(|v| v.ln()).collect(),
        bandwidths,
        fitted: Vec::new(),
        floor,
        scale: T::one(),
        constant_fallback,
    };
    let fitted = (0..n)
        .map(|i| {
            let row: Vec<T> = x.row(i).iter().copied().collect();
            model.predict(&row)
        })
        .collect::<Result<Vec<T>>>()?;
    model.fitted = fitted;
    Ok(model)
}

/// Instruments `𝔐(X_i) = (X_i, X_i/σ̂²(X_i))`, an `n × 2p` matrix.
#[derive(Debug, Clone)]
pub struct InstrumentSet<T: Scalar> {
    pub values: DMatrix<T>,
}

impl<T: Scalar> InstrumentSet<T> {
    /// Arbitrary instrument matrix, e.g. `X` alone for the just-identified case.
    pub fn from_matrix(values: DMatrix<T>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("non-finite instrument".into()));
        }
        Ok(InstrumentSet { values })
    }
    pub fn q(&self) -> usize {
        self.values.ncols()
    }
}

pub fn build_instruments<T: Scalar>(x: &DMatrix<T>, vm: &VarianceModel<T>) -> Result<InstrumentSet<T>> {
    let (n, p) = x.shape();
    if vm.fitted.len() != n || vm.x.ncols() != p {
        return Err(Error::Dimension("variance model was fitted on different covariates".into()));
    }
    let values = DMatrix::from_fn(n, 2 * p, |i, c| if c < p { x[(i, c)] } else { x[(i, c - p)] / vm.fitted[i] });
    InstrumentSet::from_matrix(values)
}
