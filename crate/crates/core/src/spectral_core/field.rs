use crate::error::{invalid, Result};

use super::Grid;

/// Scalar samples on a [`Grid`], row-major with axis 0 slowest.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    grid: Grid,
    values: Vec<f64>,
}

impl Field {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(invalid(format!(
                "field has {} values but the grid holds {}",
                values.len(),
                grid.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(invalid(format!("non-finite field value at index {i}")));
        }
        Ok(Self { grid, values })
    }

    pub(crate) fn from_parts_unchecked(grid: Grid, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self { grid, values }
    }

    pub fn zeros(grid: Grid) -> Self {
        Self {
            grid,
            values: vec![0.0; grid.len()],
        }
    }

    pub fn constant(grid: Grid, c: f64) -> Self {
        Self {
            grid,
            values: vec![c; grid.len()],
        }
    }

    /// Samples `f` at every grid point.
    pub fn from_fn<F: Fn([f64; 2]) -> f64>(grid: Grid, f: F) -> Self {
        let values = (0..grid.len()).map(|i| f(grid.point(i))).collect();
        Self { grid, values }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Discrete integral `spacing^N · Σ f`.
    pub fn integral(&self) -> f64 {
        self.grid.cell_volume() * self.values.iter().sum::<f64>()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Discrete inner product `spacing^N · Σ f g`.
    pub fn inner(&self, other: &Field) -> f64 {
        assert_eq!(self.grid, other.grid, "inner product across different grids");
        self.grid.cell_volume()
            * self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a * b)
                .sum::<f64>()
    }

    /// Discrete L2 norm.
    pub fn norm(&self) -> f64 {
        self.inner(self).sqrt()
    }

    pub fn map<F: Fn(f64) -> f64>(&self, f: F) -> Field {
        Field {
            grid: self.grid,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map<F: Fn(f64, f64) -> f64>(&self, other: &Field, f: F) -> Field {
        assert_eq!(self.grid, other.grid);
        Field {
            grid: self.grid,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn scale(&self, c: f64) -> Field {
        self.map(|v| c * v)
    }

    /// Periodic multilinear interpolation at an arbitrary point.
    pub fn interpolate(&self, x: &[f64]) -> f64 {
        let n = self.grid.points_per_axis();
        let h = self.grid.spacing();
        let l = self.grid.extent();
        let locate = |c: f64| {
            let s = (c + l) / h;
            let i0 = s.floor();
            let frac = s - i0;
            let i = (i0 as i64).rem_euclid(n as i64) as usize;
            (i, (i + 1) % n, frac)
        };
        match self.grid.dim() {
            1 => {
                let (i, j, w) = locate(x[0]);
                (1.0 - w) * self.values[i] + w * self.values[j]
            }
            _ => {
                let (i, i1, wx) = locate(x[0]);
                let (j, j1, wy) = locate(x[1]);
                let v = |a: usize, b: usize| self.values[a * n + b];
                (1.0 - wx) * ((1.0 - wy) * v(i, j) + wy * v(i, j1))
                    + wx * ((1.0 - wy) * v(i1, j) + wy * v(i1, j1))
            }
        }
    }
}
