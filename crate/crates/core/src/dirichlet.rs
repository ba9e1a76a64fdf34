//! Restricted fractional Laplacian on the unit ball B = B(0,1) with zero
//! exterior data, its eigen-decomposition and the killed heat kernel G_B.
//!
//! For θ < 2 the operator acts on nodal values through the continuous
//! piecewise-linear (1D) or cell-constant (2D) extension of u, zero outside B;
//! the exterior integral is folded analytically into the diagonal. θ = 2 is
//! the standard second-order finite-difference Dirichlet Laplacian.

use std::f64::consts::PI;

use faer::{Mat, Side};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::kernel::KernelEvaluator;
use crate::quad::GaussLegendre;
use crate::spectral_core::{pv_constant, Grid};

pub const MAX_SPACING: f64 = 1.0 / 32.0;
const LATTICE_SUM_RADIUS: i64 = 300;

/// Nodes of the tensor grid on `[−1, 1)^N` that lie strictly inside B.
#[derive(Debug, Clone)]
pub struct BallGrid {
    dim: usize,
    spacing: f64,
    points_per_axis: usize,
    nodes: Vec<[f64; 2]>,
    lattice: Vec<[i64; 2]>,
    boundary_distance: Vec<f64>,
    // tensor-grid index → node index
    lookup: Vec<Option<usize>>,
}

impl BallGrid {
    /// `points_per_axis` ≥ 64 so that the spacing `2/points_per_axis` is at
    /// most 1/32.
    pub fn new(dim: usize, points_per_axis: usize) -> Result<Self> {
        let grid = Grid::new(dim, 1.0, points_per_axis)?;
        let spacing = grid.spacing();
        if spacing > MAX_SPACING + 1e-15 {
            return Err(invalid(format!(
                "ball grid spacing {spacing} exceeds {MAX_SPACING}"
            )));
        }
        let n = points_per_axis;
        let mut nodes = Vec::new();
        let mut lattice = Vec::new();
        let mut boundary_distance = Vec::new();
        let mut lookup = vec![None; grid.len()];
        for (idx, slot) in lookup.iter_mut().enumerate() {
            let p = grid.point(idx);
            let r = grid.radius(idx);
            if r < 1.0 - 1e-12 {
                *slot = Some(nodes.len());
                nodes.push(p);
                let l = if dim == 1 {
                    [idx as i64, 0]
                } else {
                    [(idx / n) as i64, (idx % n) as i64]
                };
                lattice.push(l);
                boundary_distance.push(1.0 - r);
            }
        }
        Ok(Self {
            dim,
            spacing,
            points_per_axis: n,
            nodes,
            lattice,
            boundary_distance,
            lookup,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn points_per_axis(&self) -> usize {
        self.points_per_axis
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, i: usize) -> &[f64] {
        &self.nodes[i][..self.dim]
    }

    pub fn boundary_distance(&self) -> &[f64] {
        &self.boundary_distance
    }

    pub fn radius(&self, i: usize) -> f64 {
        1.0 - self.boundary_distance[i]
    }

    /// Nodes at least one spacing away from ∂B.
    pub fn interior_nodes(&self) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.boundary_distance[i] > self.spacing * (1.0 + 1e-9))
            .collect()
    }

    /// Node index at lattice position `l`, if that position is inside B.
    fn at(&self, l: [i64; 2]) -> Option<usize> {
        let n = self.points_per_axis as i64;
        if l[0] < 0 || l[0] >= n || l[1] < 0 || l[1] >= n {
            return None;
        }
        let idx = if self.dim == 1 { l[0] } else { l[0] * n + l[1] };
        self.lookup[idx as usize]
    }

    /// Multilinear interpolation of nodal `values` at `x`; lattice points
    /// outside B carry the value 0.
    pub fn interpolate(&self, values: &[f64], x: &[f64]) -> f64 {
        let h = self.spacing;
        let locate = |c: f64| {
            let s = (c + 1.0) / h;
            let i = s.floor();
            (i as i64, s - i)
        };
        let val = |l: [i64; 2]| self.at(l).map_or(0.0, |k| values[k]);
        if self.dim == 1 {
            let (i, w) = locate(x[0]);
            (1.0 - w) * val([i, 0]) + w * val([i + 1, 0])
        } else {
            let (i, wx) = locate(x[0]);
            let (j, wy) = locate(x[1]);
            (1.0 - wx) * ((1.0 - wy) * val([i, j]) + wy * val([i, j + 1]))
                + wx * ((1.0 - wy) * val([i + 1, j]) + wy * val([i + 1, j + 1]))
        }
    }

    /// Index of the node closest to `x`.
    pub fn nearest(&self, x: &[f64]) -> usize {
        let mut best = (f64::INFINITY, 0);
        for i in 0..self.len() {
            let d: f64 = self.node(i).iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
            if d < best.0 {
                best = (d, i);
            }
        }
        best.1
    }
}

/// Dense restricted fractional Laplacian with its spectrum.
#[derive(Debug, Clone)]
pub struct DirichletOperator {
    grid: BallGrid,
    theta: f64,
    matrix: Mat<f64>,
    eigenvalues: Vec<f64>,
    eigenvectors: Mat<f64>,
}

impl DirichletOperator {
    pub fn assemble(grid: BallGrid, theta: f64) -> Result<Self> {
        if !(theta > 0.0 && theta <= 2.0) {
            return Err(invalid(format!("theta must lie in (0, 2], got {theta}")));
        }
        let matrix = if theta == 2.0 {
            laplacian_fd(&grid)
        } else if grid.dim == 1 {
            restricted_1d(&grid, theta)?
        } else {
            restricted_2d(&grid, theta)?
        };
        let n = matrix.nrows();
        let mut asym: f64 = 0.0;
        let mut scale: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                asym = asym.max((matrix[(i, j)] - matrix[(j, i)]).abs());
                scale = scale.max(matrix[(i, j)].abs());
            }
        }
        if asym > 1e-12 * scale {
            return Err(Error::Indefinite(format!("asymmetry {asym:e}")));
        }
        let eig = matrix
            .self_adjoint_eigen(Side::Lower)
            .map_err(|e| Error::Indefinite(format!("eigensolver failed: {e:?}")))?;
        let values = eig.S().column_vector();
        let vectors = eig.U();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        let eigenvalues: Vec<f64> = order.iter().map(|&k| values[k]).collect();
        if !(eigenvalues[0] > 0.0) {
            return Err(Error::Indefinite(format!(
                "smallest eigenvalue {:e} is not positive",
                eigenvalues[0]
            )));
        }
        let eigenvectors = Mat::from_fn(n, n, |i, k| vectors[(i, order[k])]);
        Ok(Self {
            grid,
            theta,
            matrix,
            eigenvalues,
            eigenvectors,
        })
    }

    pub fn grid(&self) -> &BallGrid {
        &self.grid
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn matrix(&self) -> &Mat<f64> {
        &self.matrix
    }

    /// Ascending.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Orthonormal columns (in the plain ℓ² inner product), matching
    /// [`Self::eigenvalues`].
    pub fn eigenvectors(&self) -> &Mat<f64> {
        &self.eigenvectors
    }

    /// max |VᵀV − I|.
    pub fn orthonormality_defect(&self) -> f64 {
        let v = &self.eigenvectors;
        let g = v.transpose() * v;
        let mut worst: f64 = 0.0;
        for i in 0..g.nrows() {
            for j in 0..g.ncols() {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((g[(i, j)] - target).abs());
            }
        }
        worst
    }
}

fn laplacian_fd(grid: &BallGrid) -> Mat<f64> {
    let n = grid.len();
    let h2 = grid.spacing * grid.spacing;
    let mut a = Mat::zeros(n, n);
    for i in 0..n {
        a[(i, i)] = 2.0 * grid.dim as f64 / h2;
        for l in neighbours(grid, i) {
            if let Some(j) = grid.at(l) {
                a[(i, j)] = -1.0 / h2;
            }
        }
    }
    a
}

fn neighbours(grid: &BallGrid, i: usize) -> Vec<[i64; 2]> {
    let [a, b] = grid.lattice[i];
    if grid.dim == 1 {
        vec![[a - 1, 0], [a + 1, 0]]
    } else {
        vec![[a - 1, b], [a + 1, b], [a, b - 1], [a, b + 1]]
    }
}

/// `∫ hat_k(ρ) ρ^{−1−θ} dρ` over ρ ≥ 1 for the unit-spacing hat centred at k.
fn hat_moment(k: usize, theta: f64, gl: &GaussLegendre) -> f64 {
    let kf = k as f64;
    let w = |r: f64| r.powf(-1.0 - theta);
    let rising = if k >= 2 {
        gl.integrate(kf - 1.0, kf, |r| (r - (kf - 1.0)) * w(r))
    } else {
        0.0
    };
    rising + gl.integrate(kf, kf + 1.0, |r| (kf + 1.0 - r) * w(r))
}

// Row i: C[Σ_{j≠i} β_{|i−j|}(u_i − u_j)] over the whole lattice with u = 0 off
// the interior nodes. Inside |r| < h the second-difference model of u is used.
fn restricted_1d(grid: &BallGrid, theta: f64) -> Result<Mat<f64>> {
    let n = grid.len();
    let h = grid.spacing;
    let c = pv_constant(1, theta)?;
    let gl = GaussLegendre::new(16);
    let hmt = h.powf(-theta);
    let mut beta: Vec<f64> = (0..=n).map(|k| if k == 0 { 0.0 } else { hmt * hat_moment(k, theta, &gl) }).collect();
    beta[1] += hmt / (2.0 - theta);
    let total = 2.0 * hmt * (1.0 / (2.0 - theta) + 1.0 / theta);
    let mut a = Mat::zeros(n, n);
    for i in 0..n {
        a[(i, i)] = c * total;
        for j in 0..n {
            if i != j {
                let k = (grid.lattice[i][0] - grid.lattice[j][0]).unsigned_abs() as usize;
                a[(i, j)] = -c * beta[k];
            }
        }
    }
    Ok(a)
}

/// `Σ_{m ∈ ℤ² ∖ 0} |m|^{−2−θ}`: direct sum over |m|_∞ ≤ M plus the integral
/// of |z|^{−2−θ} outside the square of half-width M + ½.
fn lattice_zeta(theta: f64) -> f64 {
    let m = LATTICE_SUM_RADIUS;
    let e = -0.5 * (2.0 + theta);
    let mut s = 0.0;
    for i in -m..=m {
        for j in -m..=m {
            if i != 0 || j != 0 {
                s += ((i * i + j * j) as f64).powf(e);
            }
        }
    }
    let a = m as f64 + 0.5;
    let gl = GaussLegendre::new(16);
    s + 8.0 * gl.integrate(0.0, 0.25 * PI, |phi| (a / phi.cos()).powf(-theta)) / theta
}

fn restricted_2d(grid: &BallGrid, theta: f64) -> Result<Mat<f64>> {
    let n = grid.len();
    let h = grid.spacing;
    let c = pv_constant(2, theta)?;
    let gl = GaussLegendre::new(16);
    let hmt = h.powf(-theta);
    // ∫ over the own cell of |z|^{−θ}, times the Taylor factor 1/4 of Δu
    let cell = h.powf(2.0 - theta) * 8.0
        * gl.integrate(0.0, 0.25 * PI, |phi| (0.5 / phi.cos()).powf(2.0 - theta))
        / (2.0 - theta);
    let near = c * cell / (4.0 * h * h);
    let diag = c * hmt * lattice_zeta(theta) + 4.0 * near;
    let mut a = Mat::zeros(n, n);
    for i in 0..n {
        a[(i, i)] = diag;
        let [li, lj] = grid.lattice[i];
        for j in 0..i {
            let [mi, mj] = grid.lattice[j];
            let d2 = ((li - mi).pow(2) + (lj - mj).pow(2)) as f64;
            let v = -c * hmt * d2.powf(-0.5 * (2.0 + theta));
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
    for i in 0..n {
        for l in neighbours(grid, i) {
            if let Some(j) = grid.at(l) {
                a[(i, j)] -= near;
            }
        }
    }
    Ok(a)
}

/// Heat kernel of a [`DirichletOperator`] on its nodes.
#[derive(Debug, Clone)]
pub struct DirichletKernel {
    operator: DirichletOperator,
}

/// Ratio band of `G_B / [(1∧d_x^{θ/2}/√t)(1∧d_y^{θ/2}/√t) Γ_θ(x−y, c t)]`.
#[derive(Debug, Clone, Serialize)]
pub struct TwoSidedBand {
    pub c: f64,
    pub min: f64,
    pub max: f64,
    pub samples: usize,
}

impl TwoSidedBand {
    pub fn spread(&self) -> f64 {
        self.max / self.min
    }

    pub fn is_valid(&self) -> bool {
        self.min > 0.0 && self.max.is_finite() && self.spread().is_finite()
    }
}

impl DirichletKernel {
    pub fn new(operator: DirichletOperator) -> Self {
        Self { operator }
    }

    pub fn operator(&self) -> &DirichletOperator {
        &self.operator
    }

    /// `h^{−N} Σ_n e^{−λ_n t} E_{x n} E_{y n}`.
    pub fn heat_kernel(&self, x: usize, y: usize, t: f64) -> Result<f64> {
        if !(t > 0.0) {
            return Err(invalid(format!("time must be positive, got {t}")));
        }
        let op = &self.operator;
        let v = &op.eigenvectors;
        let h = op.grid.spacing.powi(op.grid.dim as i32);
        let mut s = 0.0;
        for (k, lam) in op.eigenvalues.iter().enumerate() {
            s += (-lam * t).exp() * (v[(x, k)] * v[(y, k)]);
        }
        Ok(s / h)
    }

    /// The row `G_B(x, ·, t)` over all nodes.
    pub fn heat_kernel_row(&self, x: usize, t: f64) -> Result<Vec<f64>> {
        if !(t > 0.0) {
            return Err(invalid(format!("time must be positive, got {t}")));
        }
        let op = &self.operator;
        let v = &op.eigenvectors;
        let h = op.grid.spacing.powi(op.grid.dim as i32);
        let w: Vec<f64> = op
            .eigenvalues
            .iter()
            .enumerate()
            .map(|(k, lam)| (-lam * t).exp() * v[(x, k)] / h)
            .collect();
        Ok((0..op.grid.len())
            .map(|y| w.iter().enumerate().map(|(k, wk)| wk * v[(y, k)]).sum())
            .collect())
    }

    /// `h^N Σ_y G_B(x, y, t)`.
    pub fn mass(&self, x: usize, t: f64) -> Result<f64> {
        let h = self.operator.grid.spacing.powi(self.operator.grid.dim as i32);
        Ok(self.heat_kernel_row(x, t)?.iter().sum::<f64>() * h)
    }

    /// Ratio bands of the two-sided estimate over `samples` = (x, y, t) node
    /// pairs for each candidate constant in `cs`. Samples within one spacing
    /// of ∂B are rejected.
    pub fn verify_two_sided(
        &self,
        samples: &[(usize, usize, f64)],
        cs: &[f64],
        free: &KernelEvaluator,
    ) -> Result<Vec<TwoSidedBand>> {
        let grid = &self.operator.grid;
        let theta = self.operator.theta;
        if free.params().theta != theta || free.params().n_dim != grid.dim {
            return Err(invalid("free kernel does not match the operator"));
        }
        for &(x, y, t) in samples {
            if !(t > 0.0 && t <= 1.0) {
                return Err(invalid(format!("sample time {t} outside (0, 1]")));
            }
            let dmin = grid.boundary_distance[x].min(grid.boundary_distance[y]);
            if dmin <= grid.spacing * (1.0 + 1e-9) {
                return Err(invalid("sample node lies within one spacing of the boundary"));
            }
        }
        let computed: Vec<Result<(f64, f64, f64, f64)>> = samples
            .par_iter()
            .map(|&(x, y, t)| {
                let g = self.heat_kernel(x, y, t)?;
                let fx = (grid.boundary_distance[x].powf(0.5 * theta) / t.sqrt()).min(1.0);
                let fy = (grid.boundary_distance[y].powf(0.5 * theta) / t.sqrt()).min(1.0);
                let dist: f64 = grid
                    .node(x)
                    .iter()
                    .zip(grid.node(y))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                Ok((g, fx * fy, dist, t))
            })
            .collect();
        let mut rows = Vec::with_capacity(samples.len());
        for r in computed {
            rows.push(r?);
        }
        Ok(cs
            .iter()
            .map(|&c| {
                let mut lo = f64::INFINITY;
                let mut hi: f64 = 0.0;
                for &(g, f, d, t) in &rows {
                    let r = g / (f * free.eval_radial(d, c * t));
                    lo = lo.min(r);
                    hi = hi.max(r);
                }
                TwoSidedBand {
                    c,
                    min: lo,
                    max: hi,
                    samples: rows.len(),
                }
            })
            .collect())
    }
}
