use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Uniform periodic grid on `[-extent, extent)^dim`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    dim: usize,
    extent: f64,
    points_per_axis: usize,
}

impl Grid {
    pub fn new(dim: usize, extent: f64, points_per_axis: usize) -> Result<Self> {
        if dim != 1 && dim != 2 {
            return Err(invalid(format!("grid dimension must be 1 or 2, got {dim}")));
        }
        if !(extent.is_finite() && extent > 0.0) {
            return Err(invalid(format!("grid extent must be positive, got {extent}")));
        }
        if points_per_axis < 16 || points_per_axis % 2 != 0 {
            return Err(invalid(format!(
                "points per axis must be even and at least 16, got {points_per_axis}"
            )));
        }
        Ok(Self {
            dim,
            extent,
            points_per_axis,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn extent(&self) -> f64 {
        self.extent
    }

    pub fn points_per_axis(&self) -> usize {
        self.points_per_axis
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.extent / self.points_per_axis as f64
    }

    /// Total number of samples.
    pub fn len(&self) -> usize {
        self.points_per_axis.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Volume element `spacing^dim`.
    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.dim as i32)
    }

    pub fn axis_coord(&self, i: usize) -> f64 {
        -self.extent + i as f64 * self.spacing()
    }

    /// Coordinates of the sample with flat index `idx` (row-major, axis 0 slowest).
    pub fn point(&self, idx: usize) -> [f64; 2] {
        let n = self.points_per_axis;
        match self.dim {
            1 => [self.axis_coord(idx), 0.0],
            _ => [self.axis_coord(idx / n), self.axis_coord(idx % n)],
        }
    }

    pub fn radius(&self, idx: usize) -> f64 {
        let p = self.point(idx);
        (p[0] * p[0] + p[1] * p[1]).sqrt()
    }

    /// Displacement reduced to the periodic cell `[-L, L)`.
    pub fn wrap(&self, d: f64) -> f64 {
        let period = 2.0 * self.extent;
        let mut w = (d + self.extent).rem_euclid(period) - self.extent;
        if w >= self.extent {
            w -= period;
        }
        w
    }

    /// Angular wavenumber of FFT bin `k` along one axis.
    pub fn wavenumber(&self, k: usize) -> f64 {
        let n = self.points_per_axis;
        let kk = if k <= n / 2 { k as f64 } else { k as f64 - n as f64 };
        std::f64::consts::PI * kk / self.extent
    }

    /// `|ξ|` for every flat FFT index.
    pub fn wavenumber_magnitudes(&self) -> Vec<f64> {
        let n = self.points_per_axis;
        match self.dim {
            1 => (0..n).map(|k| self.wavenumber(k).abs()).collect(),
            _ => {
                let mut out = Vec::with_capacity(n * n);
                for k0 in 0..n {
                    let a = self.wavenumber(k0);
                    for k1 in 0..n {
                        let b = self.wavenumber(k1);
                        out.push((a * a + b * b).sqrt());
                    }
                }
                out
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_shapes() {
        assert!(Grid::new(3, 1.0, 32).is_err());
        assert!(Grid::new(1, 0.0, 32).is_err());
        assert!(Grid::new(1, 1.0, 15).is_err());
        assert!(Grid::new(1, 1.0, 8).is_err());
        assert!(Grid::new(2, 1.0, 33).is_err());
    }

    #[test]
    fn coordinates_and_spacing() {
        let g = Grid::new(2, 4.0, 16).unwrap();
        assert_eq!(g.spacing(), 0.5);
        assert_eq!(g.len(), 256);
        assert_eq!(g.point(0), [-4.0, -4.0]);
        assert_eq!(g.point(17), [-3.5, -3.5]);
        assert_eq!(g.point(8 * 16 + 8), [0.0, 0.0]);
    }

    #[test]
    fn wrap_maps_into_cell() {
        let g = Grid::new(1, 2.0, 16).unwrap();
        assert!((g.wrap(3.0) + 1.0).abs() < 1e-15);
        assert!((g.wrap(-2.5) - 1.5).abs() < 1e-15);
        assert_eq!(g.wrap(2.0), -2.0);
    }
}
