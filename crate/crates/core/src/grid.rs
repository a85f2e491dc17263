use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform one-dimensional grid. Nodes sit at `x_min + i * dx`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid1D {
    pub x_min: f64,
    pub x_max: f64,
    pub dx: f64,
    pub n: usize,
}

impl Grid1D {
    pub fn new(x_min: f64, dx: f64, n: usize) -> Result<Self> {
        if !(dx > 0.0) || !x_min.is_finite() || n < 3 {
            return Err(Error::InvalidArgument(format!(
                "grid needs dx > 0 and at least 3 nodes (dx = {dx}, n = {n})"
            )));
        }
        Ok(Self { x_min, x_max: x_min + (n - 1) as f64 * dx, dx, n })
    }

    /// Grid covering `[lo, hi]` whose nodes are integer multiples of `dx`,
    /// so grids built with the same spacing share their nodes.
    pub fn snapped(lo: f64, hi: f64, dx: f64) -> Result<Self> {
        if !(hi > lo) {
            return Err(Error::InvalidArgument(format!("empty interval [{lo}, {hi}]")));
        }
        let i_lo = (lo / dx + 1e-9).floor() as i64;
        let i_hi = (hi / dx - 1e-9).ceil() as i64;
        Self::new(i_lo as f64 * dx, dx, (i_hi - i_lo + 1) as usize)
    }

    #[inline]
    pub fn x(&self, i: usize) -> f64 {
        self.x_min + i as f64 * self.dx
    }

    pub fn xs(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.x(i)).collect()
    }

    /// Index of the node nearest to `x`, clamped to the grid.
    pub fn nearest(&self, x: f64) -> usize {
        let k = ((x - self.x_min) / self.dx).round();
        k.clamp(0.0, (self.n - 1) as f64) as usize
    }

    /// Offset (in nodes) of `other`'s first node within `self`, when `other`
    /// is an aligned sub-grid.
    pub fn offset_of(&self, other: &Grid1D) -> Result<usize> {
        let rel = (self.dx - other.dx).abs() / self.dx;
        let k = (other.x_min - self.x_min) / self.dx;
        let ki = k.round();
        if rel > 1e-12 || (k - ki).abs() > 1e-6 || ki < 0.0 || ki as usize + other.n > self.n {
            return Err(Error::GridMismatch(format!(
                "[{}, {}] (dx {}) is not an aligned sub-grid of [{}, {}] (dx {})",
                other.x_min, other.x_max, other.dx, self.x_min, self.x_max, self.dx
            )));
        }
        Ok(ki as usize)
    }

    /// Trapezoidal quadrature of nodal values.
    pub fn integrate(&self, f: &[f64]) -> f64 {
        debug_assert_eq!(f.len(), self.n);
        let inner: f64 = f[1..self.n - 1].iter().sum();
        self.dx * (inner + 0.5 * (f[0] + f[self.n - 1]))
    }

    /// Trapezoidal quadrature of the pointwise product `f * g`.
    pub fn integrate_product(&self, f: &[f64], g: &[f64]) -> f64 {
        let n = self.n;
        let inner: f64 = f[1..n - 1].iter().zip(&g[1..n - 1]).map(|(a, b)| a * b).sum();
        self.dx * (inner + 0.5 * (f[0] * g[0] + f[n - 1] * g[n - 1]))
    }
}
