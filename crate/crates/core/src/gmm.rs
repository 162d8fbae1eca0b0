//! Local-linear GMM: moments projected onto the eigenfunctions of their
//! covariance and weighted by `λ_k/(λ_k² + α)`.
//!
//! At `s0` write the empirical moment as `ḡ(γ) = B − A·γ` with
//!
//! * `A = (nr)⁻¹ Σ_j K_h(s_j − s0)·(z_j z_jᵀ) ⊗ Σ_i 𝔐(X_i)X_iᵀ` (`d × 2p`)
//! * `B = (nr)⁻¹ Σ_j K_h(s_j − s0)·z_j ⊗ Σ_i 𝔐(X_i)Y_ij` (`d`)
//!
//! so the projections are `𝒳_k = Aᵀφ_k(s0)` and `𝒴_k = φ_k(s0)ᵀB`, and the
//! minimizer of `Σ_k w_k(𝒴_k − 𝒳_kᵀγ)²` solves `(AᵀΩA)γ = AᵀΩB` with
//! `Ω = Σ_k w_k φ_k φ_kᵀ`. Under [`MomentWeighting::BlockDiagonal`] the level
//! and slope halves of each `φ_k` are projected separately, which zeroes the
//! off-diagonal blocks of `Ω`.
//!
//! Inference quantities from the asymptotic theory (the limiting covariance
//! of `β̂`) are not computed.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::EstimatorConfig;
pub use crate::config::MomentWeighting;
use crate::error::{Error, Result, Stage};
use crate::fpca::{lineup_eigen, lineup_eigen_from_sample, select_truncation, EigenSystem};
use crate::hetero::{build_instruments, fit_variance, integrated_sq_residuals, InstrumentSet};
use crate::io::{CoefficientEstimate, FunctionalDataset};
use crate::kernel::{check_bandwidth, window, window_moments};
use crate::linalg::solve_spd;
use crate::locallinear::{cv_search, FoldFit, LleFit, LleStats, DEFAULT_JITTER};
use crate::moments::{moment_covariance, moment_sample};
use crate::scalar::Scalar;

/// Projected moments at one `s0`: `𝒴_k − 𝒳_kᵀγ` is the `k`-th projection of
/// `ḡ(γ)` and `weights[k]` its spectral weight.
#[derive(Debug, Clone)]
pub struct SpectralSystem<T: Scalar> {
    pub xs: Vec<DVector<T>>,
    pub ys: Vec<T>,
    pub weights: Vec<T>,
}

impl<T: Scalar> SpectralSystem<T> {
    /// `(Σ_k w_k 𝒳_k𝒳_kᵀ, Σ_k w_k 𝒳_k𝒴_k)`.
    pub fn normal_equations(&self) -> (DMatrix<T>, DVector<T>) {
        let dim = self.xs.first().map_or(0, |x| x.len());
        let mut lhs = DMatrix::zeros(dim, dim);
        let mut rhs = DVector::zeros(dim);
        for ((x, &y), &w) in self.xs.iter().zip(&self.ys).zip(&self.weights) {
            lhs += x * x.transpose() * w;
            rhs += x * (w * y);
        }
        (lhs, rhs)
    }
}

/// `Σ_i 𝔐(X_i)X_iᵀ` (`q × p`) and `Σ_i 𝔐(X_i)Y_ij` (`r × q`) over a subject set.
#[derive(Debug, Clone)]
pub struct GmmStats<T: Scalar> {
    smx: DMatrix<T>,
    smy: DMatrix<T>,
    n: usize,
}

impl<T: Scalar> GmmStats<T> {
    pub fn new(data: &FunctionalDataset<T>, inst: &InstrumentSet<T>, rows: &[usize]) -> Self {
        let x = data.covariates().select_rows(rows.iter());
        let y = data.responses().select_rows(rows.iter());
        let m = inst.values.select_rows(rows.iter());
        GmmStats { smx: m.transpose() * &x, smy: y.transpose() * &m, n: rows.len() }
    }

    /// `(A, B)` at `s0`.
    pub fn design(&self, points: &[T], s0: T, h: T) -> Result<(DMatrix<T>, DVector<T>)> {
        let win = window(points, s0, h);
        if win.is_empty() {
            return Err(Error::EmptyWindow { s0: s0.as_f64(), h: h.as_f64() });
        }
        let (q, p) = self.smx.shape();
        let scale = T::one() / (T::from_usize_lossy(self.n) * T::from_usize_lossy(points.len()));
        let a = window_moments(&win);
        let mut am = DMatrix::zeros(2 * q, 2 * p);
        for r in 0..q {
            for c in 0..p {
                let v = self.smx[(r, c)] * scale;
                am[(r, c)] = a[0] * v;
                am[(r, p + c)] = a[1] * v;
                am[(q + r, c)] = a[1] * v;
                am[(q + r, p + c)] = a[2] * v;
            }
        }
        let mut b = DVector::zeros(2 * q);
        for &(j, k, u) in &win {
            for m in 0..q {
                let t = self.smy[(j, m)];
                b[m] += k * t;
                b[q + m] += k * u * t;
            }
        }
        b *= scale;
        Ok((am, b))
    }
}

/// Projection vectors paired with their weights: the columns of `φ_k(s0)`
/// (split into level and slope halves under block-diagonal weighting).
fn projections<T: Scalar>(eig: &EigenSystem<T>, weights: &[T], s0: T, weighting: MomentWeighting) -> Vec<(DVector<T>, T)> {
    let d = eig.d;
    let q = d / 2;
    let mut out = Vec::with_capacity(2 * eig.len());
    for (k, &w) in weights.iter().enumerate() {
        let phi = eig.phi_at(k, s0);
        match weighting {
            MomentWeighting::Full => out.push((phi, w)),
            MomentWeighting::BlockDiagonal => {
                let mut lo = phi.clone();
                let mut hi = phi;
                lo.rows_mut(q, d - q).fill(T::zero());
                hi.rows_mut(0, q).fill(T::zero());
                out.push((lo, w));
                out.push((hi, w));
            }
        }
    }
    out
}

fn omega_from<T: Scalar>(proj: &[(DVector<T>, T)], d: usize) -> DMatrix<T> {
    let mut om = DMatrix::zeros(d, d);
    for (v, w) in proj {
        om += v * v.transpose() * *w;
    }
    om
}

/// Projected moments at `s0` for the full sample.
pub fn spectral_system<T: Scalar>(data: &FunctionalDataset<T>, inst: &InstrumentSet<T>, eig: &EigenSystem<T>, h: T, s0: T, weighting: MomentWeighting) -> Result<SpectralSystem<T>> {
    check_bandwidth(h)?;
    check_shapes(data, inst, eig)?;
    let stats = GmmStats::new(data, inst, &(0..data.n()).collect::<Vec<_>>());
    let (a, b) = stats.design(data.grid().points(), s0, h)?;
    let weights = eig.weights()?;
    let mut sys = SpectralSystem { xs: Vec::new(), ys: Vec::new(), weights: Vec::new() };
    for (v, w) in projections(eig, &weights, s0, weighting) {
        sys.xs.push(a.tr_mul(&v));
        sys.ys.push(v.dot(&b));
        sys.weights.push(w);
    }
    Ok(sys)
}

fn check_shapes<T: Scalar>(data: &FunctionalDataset<T>, inst: &InstrumentSet<T>, eig: &EigenSystem<T>) -> Result<()> {
    if inst.values.nrows() != data.n() {
        return Err(Error::Dimension(format!("{} instrument rows for {} subjects", inst.values.nrows(), data.n())));
    }
    if eig.d != 2 * inst.q() {
        return Err(Error::Dimension(format!("eigenfunctions have {} components, instruments imply {}", eig.d, 2 * inst.q())));
    }
    if !eig.grid.same_as(data.grid()) {
        return Err(Error::Dimension("eigenfunctions live on a different grid".into()));
    }
    Ok(())
}

/// GMM fitter with the weighting matrices precomputed at the grid points.
pub struct GmmFit<'a, T: Scalar> {
    data: &'a FunctionalDataset<T>,
    inst: &'a InstrumentSet<T>,
    eig: &'a EigenSystem<T>,
    weighting: MomentWeighting,
    jitter: T,
    weights: Vec<T>,
    omega: Vec<DMatrix<T>>,
}

impl<'a, T: Scalar> GmmFit<'a, T> {
    pub fn new(data: &'a FunctionalDataset<T>, inst: &'a InstrumentSet<T>, eig: &'a EigenSystem<T>, weighting: MomentWeighting, jitter: T) -> Result<Self> {
        check_shapes(data, inst, eig)?;
        let weights = eig.weights()?;
        if let Some(w) = weights.iter().find(|w| !(**w > T::zero()) || !w.is_finite()) {
            return Err(Error::Invalid(format!("spectral weight {:e} is not positive", w)));
        }
        let omega = data.grid().points().iter().map(|&s| omega_from(&projections(eig, &weights, s, weighting), eig.d)).collect();
        Ok(GmmFit { data, inst, eig, weighting, jitter, weights, omega })
    }

    fn solve(&self, stats: &GmmStats<T>, s0: T, h: T, omega: &DMatrix<T>) -> Result<DVector<T>> {
        let (a, b) = stats.design(self.data.grid().points(), s0, h)?;
        let oa = omega * &a;
        let lhs = a.tr_mul(&oa);
        let rhs = oa.tr_mul(&b);
        solve_spd(&lhs, &rhs, self.jitter, s0)
    }

    /// `γ̂(s0)` from the given subject statistics.
    pub fn gamma_at(&self, stats: &GmmStats<T>, s0: T, h: T) -> Result<DVector<T>> {
        check_bandwidth(h)?;
        let proj = projections(self.eig, &self.weights, s0, self.weighting);
        self.solve(stats, s0, h, &omega_from(&proj, self.eig.d))
    }

    pub fn curve_from(&self, stats: &GmmStats<T>, h: T) -> Result<CoefficientEstimate<T>> {
        check_bandwidth(h)?;
        let grid = self.data.grid();
        let p = self.data.p();
        let r = grid.len();
        let mut beta = DMatrix::zeros(r, p);
        let mut dbeta = DMatrix::zeros(r, p);
        for (j, &s0) in grid.points().iter().enumerate() {
            let g = self.solve(stats, s0, h, &self.omega[j])?;
            for m in 0..p {
                beta[(j, m)] = g[m];
                dbeta[(j, m)] = g[p + m];
            }
        }
        CoefficientEstimate::new(grid.clone(), beta, dbeta, h)
    }

    pub fn curve(&self, h: T) -> Result<CoefficientEstimate<T>> {
        self.curve_from(&self.full_stats(), h)
    }

    pub fn full_stats(&self) -> GmmStats<T> {
        GmmStats::new(self.data, self.inst, &(0..self.data.n()).collect::<Vec<_>>())
    }
}

impl<T: Scalar> FoldFit<T> for GmmFit<'_, T> {
    type Prepared = GmmStats<T>;
    fn prepare(&self, train: &[usize]) -> Result<GmmStats<T>> {
        Ok(GmmStats::new(self.data, self.inst, train))
    }
    fn beta(&self, stats: &GmmStats<T>, h: T) -> Result<DMatrix<T>> {
        Ok(self.curve_from(stats, h)?.beta)
    }
}

/// `(β̂(s0), h·β̇̂(s0))` with block-diagonal weighting.
pub fn gmm_at<T: Scalar>(data: &FunctionalDataset<T>, inst: &InstrumentSet<T>, eig: &EigenSystem<T>, h: T, s0: T) -> Result<(DVector<T>, DVector<T>)> {
    let fit = GmmFit::new(data, inst, eig, MomentWeighting::default(), T::lit(DEFAULT_JITTER))?;
    let g = fit.gamma_at(&fit.full_stats(), s0, h)?;
    let p = data.p();
    Ok((g.rows(0, p).into_owned(), g.rows(p, p).into_owned()))
}

pub fn gmm_curve<T: Scalar>(data: &FunctionalDataset<T>, inst: &InstrumentSet<T>, eig: &EigenSystem<T>, h: T) -> Result<CoefficientEstimate<T>> {
    GmmFit::new(data, inst, eig, MomentWeighting::default(), T::lit(DEFAULT_JITTER))?.curve(h)
}

/// Summary of one run of [`estimate_full`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostics {
    pub h_init: f64,
    pub h_gmm_selected: f64,
    pub h_gmm: f64,
    pub fve: f64,
    pub kappa0: usize,
    pub alpha: f64,
    pub eigenvalues: Vec<f64>,
    pub sigma2_min: f64,
    pub sigma2_mean: f64,
    pub sigma2_max: f64,
    pub variance_constant_fallback: bool,
    pub weighting: String,
    pub cv_scores_init: Vec<Option<f64>>,
    pub cv_scores_gmm: Vec<Option<f64>>,
}

#[derive(Debug, Clone)]
pub struct FullEstimate<T: Scalar> {
    pub lle: CoefficientEstimate<T>,
    pub llgmm: CoefficientEstimate<T>,
    pub diagnostics: Diagnostics,
}

fn scores_f64<T: Scalar>(v: &[Option<T>]) -> Vec<Option<f64>> {
    v.iter().map(|s| s.map(Scalar::as_f64)).collect()
}

/// The whole pipeline: cross-validated local-linear fit, variance model and
/// instruments, moment eigen-decomposition, cross-validated GMM bandwidth
/// (shrunk by `bandwidth_shrink`) and the final GMM fit.
pub fn estimate_full<T: Scalar>(data: &FunctionalDataset<T>, config: &EstimatorConfig<T>) -> Result<FullEstimate<T>> {
    config.validate(data.n())?;
    let jitter = config.ridge_jitter;

    let lle_fit = LleFit { data, jitter };
    let (h_init, cv_init) = cv_search(data, config, &lle_fit).map_err(Error::at(Stage::InitialBandwidth))?;
    let lle = LleStats::full(data).curve(data.grid(), h_init, jitter).map_err(Error::at(Stage::InitialFit))?;

    let r = integrated_sq_residuals(data, &lle, config.variance_floor).map_err(Error::at(Stage::Residuals))?;
    let vm = fit_variance(data.covariates(), &r, config).map_err(Error::at(Stage::VarianceModel))?.normalized();
    let inst = build_instruments(data.covariates(), &vm).map_err(Error::at(Stage::VarianceModel))?;

    let sample = moment_sample(data, &inst, &lle, h_init).map_err(Error::at(Stage::Moments))?;
    let eig = if sample.n() < sample.values.ncols() {
        lineup_eigen_from_sample(&sample)
    } else {
        moment_covariance(&sample).and_then(|c| lineup_eigen(&c))
    }
    .and_then(|e| select_truncation(&e, config.fve))
    .map_err(Error::at(Stage::Eigen))?;

    let gmm = GmmFit::new(data, &inst, &eig, config.weighting, jitter).map_err(Error::at(Stage::GmmBandwidth))?;
    let (h_sel, cv_gmm) = cv_search(data, config, &gmm).map_err(Error::at(Stage::GmmBandwidth))?;
    let h_gmm = h_sel * config.bandwidth_shrink;
    let llgmm = gmm.curve(h_gmm).map_err(Error::at(Stage::GmmFit))?;

    let s2 = vm.fitted();
    let diagnostics = Diagnostics {
        h_init: h_init.as_f64(),
        h_gmm_selected: h_sel.as_f64(),
        h_gmm: h_gmm.as_f64(),
        fve: config.fve.as_f64(),
        kappa0: eig.kappa0.unwrap_or(0),
        alpha: eig.alpha.map_or(f64::NAN, Scalar::as_f64),
        eigenvalues: eig.eigenvalues.iter().map(|v| v.as_f64()).collect(),
        sigma2_min: s2.iter().map(|v| v.as_f64()).fold(f64::INFINITY, f64::min),
        sigma2_mean: s2.iter().map(|v| v.as_f64()).sum::<f64>() / s2.len() as f64,
        sigma2_max: s2.iter().map(|v| v.as_f64()).fold(f64::NEG_INFINITY, f64::max),
        variance_constant_fallback: vm.constant_fallback(),
        weighting: format!("{:?}", config.weighting),
        cv_scores_init: scores_f64(&cv_init),
        cv_scores_gmm: scores_f64(&cv_gmm),
    };
    Ok(FullEstimate { lle, llgmm, diagnostics })
}

/// Convenience for callers that want the variance model and instruments
/// exactly as [`estimate_full`] builds them.
pub fn pipeline_instruments<T: Scalar>(data: &FunctionalDataset<T>, lle: &CoefficientEstimate<T>, config: &EstimatorConfig<T>) -> Result<InstrumentSet<T>> {
    let r = integrated_sq_residuals(data, lle, config.variance_floor)?;
    build_instruments(data.covariates(), &fit_variance(data.covariates(), &r, config)?.normalized())
}

/// Evaluates `gmm_at` over many points in parallel.
pub fn gmm_points<T: Scalar>(fit: &GmmFit<'_, T>, points: &[T], h: T) -> Result<Vec<DVector<T>>> {
    let stats = fit.full_stats();
    points.par_iter().map(|&s0| fit.gamma_at(&stats, s0, h)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use crate::locallinear::lle_curve;

    fn data(n: usize, r: usize) -> FunctionalDataset<f64> {
        let g = Grid::<f64>::uniform(r).unwrap();
        let x = DMatrix::from_fn(n, 1, |i, _| 0.3 + ((i * 7) % n) as f64 / n as f64 * 2.0);
        let y = DMatrix::from_fn(n, r, |i, j| {
            let s = g.points()[j];
            x[(i, 0)] * (1.0 + 2.0 * s) + 0.2 * x[(i, 0)].powi(2) * ((i as f64 + 1.0) * 3.1 + 9.0 * s).sin()
        });
        FunctionalDataset::new(g, y, x).unwrap()
    }

    fn random_eigen(d: usize, grid: &Grid<f64>, k: usize) -> EigenSystem<f64> {
        let r = grid.len();
        let phi = DMatrix::from_fn(d * r, k, |i, c| ((i * 3 + c * 11) as f64 * 0.7).sin() + if i % (d * r / k.max(1)).max(1) == c { 1.0 } else { 0.0 });
        let mut e = EigenSystem::from_parts((0..k).map(|c| 2.0 / (c + 1) as f64).collect(), phi, d, grid.clone()).unwrap();
        e.alpha = Some(0.01);
        e.kappa0 = Some(k);
        e
    }

    #[test]
    fn just_identified_equals_lle() {
        let d = data(8, 30);
        let inst = InstrumentSet::from_matrix(d.covariates().clone()).unwrap();
        let eig = random_eigen(2, d.grid(), 6);
        for w in [MomentWeighting::Full, MomentWeighting::BlockDiagonal] {
            let g = GmmFit::new(&d, &inst, &eig, w, 1e-10).unwrap().curve(0.15).unwrap();
            let l = lle_curve(&d, 0.15).unwrap();
            assert!((g.beta - &l.beta).amax() < 1e-8);
            assert!((g.dbeta_scaled - &l.dbeta_scaled).amax() < 1e-8);
        }
    }

    #[test]
    fn noiseless_recovery_with_two_blocks() {
        let g = Grid::uniform(40).unwrap();
        let x = DMatrix::from_fn(6, 1, |i, _| 0.5 + i as f64 * 0.4);
        let y = DMatrix::from_fn(6, 40, |i, j| x[(i, 0)] * (0.5 - 1.5 * g.points()[j]));
        let d = FunctionalDataset::new(g.clone(), y, x.clone()).unwrap();
        let inst = InstrumentSet::from_matrix(DMatrix::from_fn(6, 2, |i, c| if c == 0 { x[(i, 0)] } else { x[(i, 0)] / (1.0 + x[(i, 0)].powi(2)) })).unwrap();
        let eig = random_eigen(4, &g, 8);
        let est = GmmFit::new(&d, &inst, &eig, MomentWeighting::BlockDiagonal, 1e-10).unwrap().curve(0.2).unwrap();
        for j in 0..40 {
            assert!((est.beta[(j, 0)] - (0.5 - 1.5 * g.points()[j])).abs() < 1e-8);
        }
    }

    #[test]
    fn normal_equation_residual() {
        let d = data(10, 25);
        let inst = InstrumentSet::from_matrix(DMatrix::from_fn(10, 2, |i, c| d.covariates()[(i, 0)].powi(c as i32 + 1))).unwrap();
        let eig = random_eigen(4, d.grid(), 7);
        for w in [MomentWeighting::Full, MomentWeighting::BlockDiagonal] {
            let fit = GmmFit::new(&d, &inst, &eig, w, 1e-10).unwrap();
            for &s0 in &[0.1, 0.5, 0.77] {
                let sys = spectral_system(&d, &inst, &eig, 0.2, s0, w).unwrap();
                let g = fit.gamma_at(&fit.full_stats(), s0, 0.2).unwrap();
                let (_, rhs) = sys.normal_equations();
                let mut res = DVector::zeros(2);
                for ((x, &y), &wk) in sys.xs.iter().zip(&sys.ys).zip(&sys.weights) {
                    res += x * (wk * (y - x.dot(&g)));
                }
                assert!(res.norm() <= 1e-8 * rhs.norm());
            }
        }
    }

    #[test]
    fn pointwise_matches_curve_and_checks_shapes() {
        let d = data(8, 20);
        let inst = InstrumentSet::from_matrix(DMatrix::from_fn(8, 2, |i, c| d.covariates()[(i, 0)] * (1.0 + c as f64 * i as f64))).unwrap();
        let eig = random_eigen(4, d.grid(), 5);
        let curve = gmm_curve(&d, &inst, &eig, 0.2).unwrap();
        let (b, _) = gmm_at(&d, &inst, &eig, 0.2, d.grid().points()[4]).unwrap();
        assert!((b[0] - curve.beta[(4, 0)]).abs() < 1e-12);
        assert_eq!(curve.grid, *d.grid());
        let wrong = random_eigen(2, d.grid(), 5);
        assert!(gmm_curve(&d, &inst, &wrong, 0.2).is_err());
        let mut unset = random_eigen(4, d.grid(), 5);
        unset.alpha = None;
        assert!(gmm_curve(&d, &inst, &unset, 0.2).is_err());
    }

    #[test]
    fn full_pipeline_runs_and_is_deterministic() {
        let d = data(20, 40);
        let cfg = EstimatorConfig::for_grid(d.grid());
        let a = estimate_full(&d, &cfg).unwrap();
        let b = estimate_full(&d, &cfg).unwrap();
        assert_eq!(a.diagnostics, b.diagnostics);
        assert_eq!(a.llgmm, b.llgmm);
        assert!(a.diagnostics.kappa0 >= 1);
        assert!(cfg.bandwidth_grid.iter().any(|&h| h == a.diagnostics.h_init));
        assert!((a.diagnostics.h_gmm - 0.75 * a.diagnostics.h_gmm_selected).abs() < 1e-15);
    }

    #[test]
    fn stage_tagged_errors() {
        // A covariate that is identically zero leaves every local system singular.
        let base = data(20, 40);
        let d = FunctionalDataset::new(base.grid().clone(), base.responses().clone(), DMatrix::zeros(20, 1)).unwrap();
        let cfg = EstimatorConfig::for_grid(d.grid());
        let err = estimate_full(&d, &cfg).unwrap_err();
        assert_eq!(err.stage(), Some(Stage::InitialBandwidth));
        assert!(err.to_string().starts_with("stage initial-bandwidth"));
    }
}
