use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::tolerances::SPECTRAL_IMAG_RESIDUE;

use super::{Field, Grid};

/// FFT plans and wavenumber magnitudes for one grid.
#[derive(Clone)]
pub struct SpectralOperator {
    grid: Grid,
    magnitudes: Arc<Vec<f64>>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for SpectralOperator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SpectralOperator")
            .field("grid", &self.grid)
            .finish()
    }
}

impl SpectralOperator {
    pub fn new(grid: Grid) -> Self {
        let mut planner = FftPlanner::new();
        let n = grid.points_per_axis();
        Self {
            grid,
            magnitudes: Arc::new(grid.wavenumber_magnitudes()),
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// `|ξ|` per flat spectral index.
    pub fn magnitudes(&self) -> &[f64] {
        &self.magnitudes
    }

    fn transform(&self, data: &mut [Complex64], plan: &Arc<dyn Fft<f64>>) {
        let n = self.grid.points_per_axis();
        plan.process(data);
        if self.grid.dim() == 2 {
            transpose(data, n);
            plan.process(data);
            transpose(data, n);
        }
    }

    /// Spectrum of real data, projected onto its Hermitian part so that
    /// rounding in the transform does not leak into the imaginary residue.
    pub fn forward(&self, values: &[f64]) -> Vec<Complex64> {
        let mut data: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.transform(&mut data, &self.forward);
        let n = self.grid.points_per_axis();
        let mirror = |i: usize| (n - i) % n;
        let partner = |idx: usize| match self.grid.dim() {
            1 => mirror(idx),
            _ => mirror(idx / n) * n + mirror(idx % n),
        };
        for idx in 0..data.len() {
            let j = partner(idx);
            if j < idx {
                continue;
            }
            let h = 0.5 * (data[idx] + data[j].conj());
            data[idx] = h;
            data[j] = h.conj();
        }
        data
    }

    /// Inverse transform, returning the real part. Panics in debug builds if
    /// the imaginary residue is not at rounding level.
    pub fn inverse_real(&self, mut data: Vec<Complex64>) -> Vec<f64> {
        self.transform(&mut data, &self.inverse);
        let scale = 1.0 / self.grid.len() as f64;
        let mut max_re = 0.0f64;
        let mut max_im = 0.0f64;
        let out: Vec<f64> = data
            .iter()
            .map(|c| {
                max_re = max_re.max(c.re.abs());
                max_im = max_im.max(c.im.abs());
                c.re * scale
            })
            .collect();
        debug_assert!(
            max_im <= SPECTRAL_IMAG_RESIDUE * max_re.max(f64::MIN_POSITIVE) || max_im < 1e-200,
            "imaginary residue {max_im:e} vs {max_re:e}"
        );
        out
    }

    /// Multiplies the spectrum of `values` by `symbol(|ξ|)`.
    pub fn apply_symbol<S: Fn(f64) -> f64>(&self, values: &[f64], symbol: S) -> Vec<f64> {
        let mut spec = self.forward(values);
        for (c, &k) in spec.iter_mut().zip(self.magnitudes.iter()) {
            *c *= symbol(k);
        }
        self.inverse_real(spec)
    }

    /// Multiplies by a precomputed per-mode factor.
    pub fn apply_factors(&self, values: &[f64], factors: &[f64]) -> Vec<f64> {
        let mut spec = self.forward(values);
        for (c, &m) in spec.iter_mut().zip(factors) {
            *c *= m;
        }
        self.inverse_real(spec)
    }

    /// Per-mode `|ξ|^θ`, with the zero mode exactly zero.
    pub fn fraclap_symbol(&self, theta: f64) -> Vec<f64> {
        self.magnitudes
            .iter()
            .map(|&k| if k == 0.0 { 0.0 } else { k.powf(theta) })
            .collect()
    }

    pub fn fraclap(&self, f: &Field, theta: f64) -> Field {
        let sym = self.fraclap_symbol(theta);
        Field::from_parts_unchecked(self.grid, self.apply_factors(f.values(), &sym))
    }

    /// Exact heat propagation `exp(-t |ξ|^θ)`.
    pub fn propagate(&self, f: &Field, theta: f64, t: f64) -> Field {
        let factors: Vec<f64> = self
            .fraclap_symbol(theta)
            .iter()
            .map(|s| (-t * s).exp())
            .collect();
        Field::from_parts_unchecked(self.grid, self.apply_factors(f.values(), &factors))
    }

    /// Periodic convolution `h^N Σ f(y) k(x - y)` where `k` is sampled at
    /// offsets `wrap(x_i - x_0)`.
    pub fn convolve(&self, f: &[f64], kernel_offsets: &[f64]) -> Vec<f64> {
        let a = self.forward(f);
        let b = self.forward(kernel_offsets);
        let vol = self.grid.cell_volume();
        let prod: Vec<Complex64> = a.iter().zip(&b).map(|(x, y)| x * y * vol).collect();
        self.inverse_real(prod)
    }
}

fn transpose(data: &mut [Complex64], n: usize) {
    for i in 0..n {
        for j in (i + 1)..n {
            data.swap(i * n + j, j * n + i);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_2d() {
        let g = Grid::new(2, 3.0, 16).unwrap();
        let v: Vec<f64> = (0..g.len()).map(|i| ((i * 7919) % 13) as f64 - 6.0).collect();
        let op = SpectralOperator::new(g);
        let back = op.inverse_real(op.forward(&v));
        for (a, b) in v.iter().zip(&back) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn laplacian_of_plane_wave() {
        let g = Grid::new(2, std::f64::consts::PI, 32).unwrap();
        let f = Field::from_fn(g, |p| (2.0 * p[0] + 3.0 * p[1]).cos());
        let op = SpectralOperator::new(g);
        let lf = op.fraclap(&f, 2.0);
        for (a, b) in lf.values().iter().zip(f.values()) {
            assert!((a - 13.0 * b).abs() < 1e-10);
        }
    }
}
