//! Local-linear GMM estimation for functional varying-coefficient models
//! observed on a common grid, `Y_i(s) = X_iᵀβ(s) + U_i(s)`, where the error
//! process may be heteroskedastic in the covariates.
//!
//! The estimator runs in three stages:
//!
//! 1. [`locallinear`]: an initial local-linear least-squares fit `β̆(s)` with a
//!    cross-validated bandwidth.
//! 2. [`hetero`] and [`fpca`]: a nonparametric model of the conditional
//!    variance of the integrated squared residuals, instruments built from
//!    it, and an eigen-decomposition of the covariance of the localized
//!    moment process (see [`moments`]) using the lining-up construction.
//! 3. [`gmm`]: moments projected onto the eigenfunctions and combined with
//!    spectral weights `λ/(λ² + α)`, giving a closed-form estimate `β̂(s)`.
//!
//! [`simulate`] reproduces the Monte Carlo design used to benchmark the
//! estimator and [`netfeat`] builds thresholded-network path-length curves
//! that can be fed back in as functional responses.
//!
//! Numerical code is generic over [`Scalar`] (`f32` or `f64`); the aliases at
//! the crate root fix it to `f64`.

pub mod config;
pub mod error;
pub mod gmm;
pub mod grid;
pub mod hetero;
pub mod io;
pub mod kernel;
pub(crate) mod linalg;
pub mod locallinear;
pub mod moments;
pub mod fpca;
pub mod netfeat;
pub mod scalar;
pub mod simulate;

pub use config::{default_bandwidth_grid, EstimatorConfig, MomentWeighting};
pub use error::{Error, Result, Stage};
pub use grid::{trapezoid_integrate, Grid};
pub use io::{load_dataset, read_estimate, write_dataset, write_estimate, CoefficientEstimate, FunctionalDataset};
pub use scalar::Scalar;

pub use fpca::{lineup_eigen, lineup_eigen_from_sample, select_truncation, EigenSystem};
pub use gmm::{estimate_full, gmm_at, gmm_curve, spectral_system, Diagnostics, FullEstimate, GmmFit, SpectralSystem};
pub use hetero::{build_instruments, fit_variance, integrated_sq_residuals, InstrumentSet, VarianceModel};
pub use kernel::{kernel_eval, kernel_scaled, local_design_vector, Kernel};
pub use locallinear::{cv_bandwidth, cv_score, fold_assignment, lle_at, lle_curve, local_system, FnFit, FoldFit, LleFit, LocalSystem};
pub use moments::{moment_covariance, moment_eval, moment_sample, MomentCovariance, MomentSample};

/// `f64` grid.
pub type Grid64 = Grid<f64>;
/// `f64` dataset.
pub type Dataset64 = FunctionalDataset<f64>;
/// `f64` coefficient estimate.
pub type Estimate64 = CoefficientEstimate<f64>;
/// `f64` estimator configuration.
pub type Config64 = EstimatorConfig<f64>;
/// `f64` eigen system.
pub type EigenSystem64 = EigenSystem<f64>;
/// `f64` variance model.
pub type VarianceModel64 = VarianceModel<f64>;
/// `f64` instrument set.
pub type Instruments64 = InstrumentSet<f64>;
