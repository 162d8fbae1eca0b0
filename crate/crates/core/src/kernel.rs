//! Epanechnikov kernel `K(u) = 0.75(1 − u²)₊` and the local design vector.
//!
//! The scaled kernel rescales its argument, `K_h(u) = K(u/h)/h`, so the
//! support of `K_h` is `[−h, h]`.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Kernel family. Only Epanechnikov is used by the estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Kernel {
    #[default]
    Epanechnikov,
}

impl Kernel {
    #[inline]
    pub fn eval<T: Scalar>(self, u: T) -> T {
        match self {
            Kernel::Epanechnikov => {
                let v = T::one() - u * u;
                if v > T::zero() {
                    T::lit(0.75) * v
                } else {
                    T::zero()
                }
            }
        }
    }

    /// `ν_{a,b} = ∫ tᵃ K(t)ᵇ dt`, in closed form.
    pub fn nu(self, a: u32, b: u32) -> f64 {
        match self {
            Kernel::Epanechnikov => {
                if a % 2 == 1 {
                    return 0.0;
                }
                // 0.75ᵇ ∫ t^a (1 − t²)^b over [−1, 1], binomially expanded.
                let mut acc = 0.0;
                let mut binom = 1.0;
                for k in 0..=b {
                    if k > 0 {
                        binom = binom * f64::from(b - k + 1) / f64::from(k);
                    }
                    let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
                    acc += sign * binom * 2.0 / f64::from(a + 2 * k + 1);
                }
                0.75f64.powi(b as i32) * acc
            }
        }
    }
}

#[inline]
pub fn kernel_eval<T: Scalar>(u: T) -> T {
    Kernel::Epanechnikov.eval(u)
}

pub fn kernel_scaled<T: Scalar>(u: T, h: T) -> Result<T> {
    check_bandwidth(h)?;
    Ok(kernel_eval(u / h) / h)
}

/// `z_h(s_j − s0) = (1, (s_j − s0)/h)`.
pub fn local_design_vector<T: Scalar>(sj: T, s0: T, h: T) -> Result<[T; 2]> {
    check_bandwidth(h)?;
    Ok([T::one(), (sj - s0) / h])
}

pub(crate) fn check_bandwidth<T: Scalar>(h: T) -> Result<()> {
    if h > T::zero() && h.is_finite() {
        Ok(())
    } else {
        Err(Error::Argument(format!("bandwidth must be positive and finite, got {:e}", h)))
    }
}

/// Kernel weights `K_h(s_j − s0)` and offsets `(s_j − s0)/h` over a grid.
/// Only points inside the window are returned, as `(j, weight, offset)`.
pub(crate) fn window<T: Scalar>(points: &[T], s0: T, h: T) -> Vec<(usize, T, T)> {
    let lo = points.partition_point(|&s| (s - s0) / h <= -T::one());
    let hi = points.partition_point(|&s| (s - s0) / h < T::one());
    (lo..hi)
        .filter_map(|j| {
            let u = (points[j] - s0) / h;
            let k = kernel_eval(u) / h;
            (k > T::zero()).then_some((j, k, u))
        })
        .collect()
}

/// Kernel moments `Σ_j K_j·u_jᵏ` for `k = 0, 1, 2` over a window.
pub(crate) fn window_moments<T: Scalar>(win: &[(usize, T, T)]) -> [T; 3] {
    let mut a = [T::zero(); 3];
    for &(_, k, u) in win {
        a[0] += k;
        a[1] += k * u;
        a[2] += k * u * u;
    }
    a
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn values() {
        assert_eq!(kernel_eval(0.0f64), 0.75);
        assert_eq!(kernel_eval(1.0f64), 0.0);
        assert!((kernel_eval(0.5f64) - 0.5625).abs() < 1e-15);
        assert!((kernel_scaled(0.0f64, 0.5).unwrap() - 1.5).abs() < 1e-15);
        assert!((kernel_scaled(0.25f64, 0.5).unwrap() - 1.125).abs() < 1e-15);
        assert_eq!(kernel_scaled(0.6f64, 0.5).unwrap(), 0.0);
        assert!(kernel_scaled(0.1f64, 0.0).is_err());
        assert!(kernel_scaled(0.1f64, -1.0).is_err());
    }

    #[test]
    fn design_vector() {
        assert_eq!(local_design_vector(0.3f64, 0.3, 0.7).unwrap(), [1.0, 0.0]);
        let z = local_design_vector(0.15f64, 0.10, 0.1).unwrap();
        assert!((z[1] - 0.5).abs() < 1e-12);
        assert_eq!(local_design_vector(0.0f64, 0.2, 0.1).unwrap()[1], -2.0);
        assert!(local_design_vector(0.0f64, 0.2, 0.0).is_err());
    }

    #[test]
    fn integrates_to_one_and_second_moment() {
        let m = 10_000;
        let step = 2.0 / m as f64;
        let mut mass = 0.0;
        let mut second = 0.0;
        for i in 0..m {
            let t = -1.0 + (i as f64 + 0.5) * step;
            mass += kernel_eval(t) * step;
            second += t * t * kernel_eval(t) * step;
        }
        assert!((mass - 1.0).abs() < 1e-6);
        assert!((second - 0.2).abs() < 1e-6);
        let k = Kernel::Epanechnikov;
        assert!((k.nu(0, 1) - 1.0).abs() < 1e-14);
        assert!((k.nu(2, 1) - 0.2).abs() < 1e-14);
        assert!((k.nu(0, 2) - 0.6).abs() < 1e-14);
        assert_eq!(k.nu(1, 1), 0.0);
    }

    #[test]
    fn window_matches_full_scan() {
        let pts: Vec<f64> = (0..50).map(|j| (j as f64 + 0.5) / 50.0).collect();
        for &(s0, h) in &[(0.0, 0.1), (0.5, 0.03), (0.99, 0.2), (0.31, 0.02)] {
            let w = window(&pts, s0, h);
            let full: Vec<usize> = (0..50).filter(|&j| kernel_scaled(pts[j] - s0, h).unwrap() > 0.0).collect();
            assert_eq!(w.iter().map(|t| t.0).collect::<Vec<_>>(), full);
        }
    }

    proptest! {
        #[test]
        fn symmetric(u in -3.0..3.0f64) {
            prop_assert_eq!(kernel_eval(u), kernel_eval(-u));
        }
    }
}
