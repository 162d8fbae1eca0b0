use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::scalar::Scalar;

/// How the projected moments are combined in the final GMM step.
///
/// `BlockDiagonal` projects the level moments (kernel-weighted sums) and the
/// slope moments (offset-weighted sums) separately onto the matching blocks
/// of each eigenfunction. `Full` uses the full outer product
/// `φ_k(s0)φ_k(s0)ᵀ`, whose level/slope cross terms make the value and slope
/// of `β` nearly confounded in finite samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MomentWeighting {
    Full,
    #[default]
    BlockDiagonal,
}

/// Tuning for [`crate::estimate_full`] and its stages.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorConfig<T> {
    /// Candidate bandwidths for both cross-validation searches.
    pub bandwidth_grid: Vec<T>,
    pub cv_folds: usize,
    /// Fraction of variance explained used to pick `κ0`.
    pub fve: T,
    /// Multiplier applied to the cross-validated GMM bandwidth.
    pub bandwidth_shrink: T,
    /// Fitted variances are floored at `variance_floor·mean(R)`.
    pub variance_floor: T,
    pub ridge_jitter: T,
    /// Seed for the fold shuffle.
    pub seed: u64,
    pub weighting: MomentWeighting,
}

impl<T: Scalar> EstimatorConfig<T> {
    /// Defaults with the standard bandwidth grid for `grid`.
    pub fn for_grid(grid: &Grid<T>) -> Self {
        EstimatorConfig {
            bandwidth_grid: default_bandwidth_grid(grid),
            cv_folds: 5,
            fve: T::lit(0.99),
            bandwidth_shrink: T::lit(0.75),
            variance_floor: T::lit(1e-6),
            ridge_jitter: T::lit(1e-10),
            seed: 0,
            weighting: MomentWeighting::BlockDiagonal,
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.bandwidth_grid.is_empty() {
            return Err(Error::Argument("bandwidth grid is empty".into()));
        }
        if let Some(h) = self.bandwidth_grid.iter().find(|h| !(**h > T::zero()) || !h.is_finite()) {
            return Err(Error::Argument(format!("bandwidth candidate {:e} is not positive", h)));
        }
        if self.cv_folds < 2 || self.cv_folds > n {
            return Err(Error::Argument(format!("cv_folds = {} must lie in [2, n = {n}]", self.cv_folds)));
        }
        if !(self.fve > T::zero() && self.fve < T::one()) {
            return Err(Error::Argument(format!("fve = {:e} must lie in (0, 1)", self.fve)));
        }
        for (name, v) in [
            ("bandwidth_shrink", self.bandwidth_shrink),
            ("variance_floor", self.variance_floor),
            ("ridge_jitter", self.ridge_jitter),
        ] {
            if !(v > T::zero()) || !v.is_finite() {
                return Err(Error::Argument(format!("{name} = {:e} must be positive", v)));
            }
        }
        Ok(())
    }
}

/// Twelve geometric points from twice the largest grid spacing up to 0.5.
pub fn default_bandwidth_grid<T: Scalar>(grid: &Grid<T>) -> Vec<T> {
    let lo = (T::lit(2.0) * grid.max_spacing()).min(T::lit(0.5));
    let hi = T::lit(0.5);
    let m = 12;
    let ratio = (hi / lo).ln() / T::from_usize_lossy(m - 1);
    (0..m).map(|k| lo * (ratio * T::from_usize_lossy(k)).exp()).collect()
}
