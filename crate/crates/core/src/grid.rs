use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Ordered design points `s_1 < … < s_r` in `[0, 1]`.
///
/// Spacings follow the convention `Δ(s_j) = s_j − s_{j−1}` with `s_0 = 0`, so
/// the first spacing is `s_1` itself and they sum to `s_r`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T> {
    points: Vec<T>,
}

impl<T: Scalar> Grid<T> {
    pub fn new(points: Vec<T>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::Invalid(format!("grid needs at least 2 points, got {}", points.len())));
        }
        for (j, &s) in points.iter().enumerate() {
            if !s.is_finite() || s < T::zero() || s > T::one() {
                return Err(Error::Invalid(format!("grid point {j} = {:e} outside [0, 1]", s)));
            }
            if j > 0 && s <= points[j - 1] {
                return Err(Error::Invalid(format!(
                    "grid not strictly increasing at index {j} ({:e} after {:e})",
                    s,
                    points[j - 1]
                )));
            }
        }
        Ok(Grid { points })
    }

    /// Midpoint grid `s_j = (j − 0.5)/r`.
    pub fn uniform(r: usize) -> Result<Self> {
        let rr = T::from_usize_lossy(r);
        Self::new((1..=r).map(|j| (T::from_usize_lossy(j) - T::lit(0.5)) / rr).collect())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[T] {
        &self.points
    }

    pub fn spacings(&self) -> Vec<T> {
        let mut prev = T::zero();
        self.points
            .iter()
            .map(|&s| {
                let d = s - prev;
                prev = s;
                d
            })
            .collect()
    }

    pub fn max_spacing(&self) -> T {
        self.spacings().into_iter().fold(T::zero(), |a, b| a.max(b))
    }

    /// Trapezoid weights including the leading panel `[0, s_1]`, on which the
    /// integrand is extended by its first value. They sum to `s_r`.
    pub fn quadrature_weights(&self) -> Vec<T> {
        let r = self.points.len();
        let half = T::lit(0.5);
        let mut w = vec![T::zero(); r];
        w[0] = self.points[0];
        for j in 1..r {
            let d = self.points[j] - self.points[j - 1];
            w[j - 1] += half * d;
            w[j] += half * d;
        }
        w
    }

    /// Index `j` and fraction `t` with `s0 ≈ (1 − t)·s_j + t·s_{j+1}`, clamped
    /// to the grid ends.
    pub(crate) fn bracket(&self, s0: T) -> (usize, T) {
        let p = &self.points;
        let r = p.len();
        if s0 <= p[0] {
            return (0, T::zero());
        }
        if s0 >= p[r - 1] {
            return (r - 2, T::one());
        }
        let j = p.partition_point(|&s| s <= s0) - 1;
        (j, (s0 - p[j]) / (p[j + 1] - p[j]))
    }

    pub fn same_as(&self, other: &Grid<T>) -> bool {
        self.points == other.points
    }
}

/// Trapezoid rule on the grid, with the leading panel `[0, s_1]` integrated
/// by constant extension of the first value.
pub fn trapezoid_integrate<T: Scalar>(values: &[T], grid: &Grid<T>) -> Result<T> {
    if values.len() != grid.len() {
        return Err(Error::Dimension(format!(
            "integrand has {} values for a grid of {} points",
            values.len(),
            grid.len()
        )));
    }
    let s = grid.points();
    let half = T::lit(0.5);
    let mut acc = values[0] * s[0];
    for j in 1..s.len() {
        acc += half * (values[j] + values[j - 1]) * (s[j] - s[j - 1]);
    }
    Ok(acc)
}
