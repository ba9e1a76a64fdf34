//! Measures, ball-supremum statistics and the capacity bounds on initial
//! data, plus the two sides of the test-function inequality
//! `∫ φ(0)^{p'} dμ ≤ C ∫∫ |(−∂_t + (−Δ)^{θ/2})φ|^{p'} dx dt`, `p' = p/(p−1)`.

use std::f64::consts::{E, PI};
use std::sync::OnceLock;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::quad::{self, GaussLegendre, Tolerance};
use crate::spectral_core::{bump, Field, Grid, SpectralOperator};
use crate::testfn::{unit_ball_volume, TestFunction};
use crate::tolerances::{NEGATIVE_ROUNDING, TERMINAL_VALUE};

// closed-ball membership slack
const BALL_SLACK: f64 = 1e-12;
const MAX_CANDIDATES: usize = 20_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub center: Vec<f64>,
    pub mass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Region {
    Ball { center: Vec<f64>, radius: f64 },
    Box { lo: Vec<f64>, hi: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Density {
    #[serde(flatten)]
    pub region: Region,
    pub level: f64,
}

/// A finite measure made of point masses and piecewise-constant densities.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MeasureSpec {
    #[serde(default)]
    pub atoms: Vec<Atom>,
    #[serde(default)]
    pub densities: Vec<Density>,
}

impl Region {
    fn dim(&self) -> usize {
        match self {
            Region::Ball { center, .. } => center.len(),
            Region::Box { lo, .. } => lo.len(),
        }
    }

    fn contains(&self, x: &[f64]) -> bool {
        match self {
            Region::Ball { center, radius } => dist(center, x) <= *radius,
            Region::Box { lo, hi } => x.iter().zip(lo.iter().zip(hi)).all(|(v, (a, b))| v >= a && v <= b),
        }
    }

    fn volume(&self) -> f64 {
        match self {
            Region::Ball { radius, .. } => unit_ball_volume(self.dim()) * radius.powi(self.dim() as i32),
            Region::Box { lo, hi } => lo.iter().zip(hi).map(|(a, b)| b - a).product(),
        }
    }

    fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        match self {
            Region::Ball { center, radius } => (
                center.iter().map(|c| c - radius).collect(),
                center.iter().map(|c| c + radius).collect(),
            ),
            Region::Box { lo, hi } => (lo.clone(), hi.clone()),
        }
    }

    /// Volume of the intersection with the closed ball B(z, σ).
    fn overlap(&self, z: &[f64], sigma: f64) -> f64 {
        match (self, z.len()) {
            (_, 1) => {
                let (lo, hi) = self.bounds();
                (hi[0].min(z[0] + sigma) - lo[0].max(z[0] - sigma)).max(0.0)
            }
            (Region::Ball { center, radius }, _) => disk_overlap(dist(center, z), *radius, sigma),
            (Region::Box { lo, hi }, _) => box_disk_overlap(lo, hi, z, sigma),
        }
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn disk_overlap(d: f64, r: f64, s: f64) -> f64 {
    if d >= r + s {
        return 0.0;
    }
    let m = r.min(s);
    if d <= (r - s).abs() {
        return PI * m * m;
    }
    let a1 = ((d * d + r * r - s * s) / (2.0 * d * r)).clamp(-1.0, 1.0).acos();
    let a2 = ((d * d + s * s - r * r) / (2.0 * d * s)).clamp(-1.0, 1.0).acos();
    let k = ((-d + r + s) * (d + r - s) * (d - r + s) * (d + r + s)).max(0.0);
    r * r * a1 + s * s * a2 - 0.5 * k.sqrt()
}

fn box_disk_overlap(lo: &[f64], hi: &[f64], z: &[f64], s: f64) -> f64 {
    let a = lo[0].max(z[0] - s);
    let b = hi[0].min(z[0] + s);
    if a >= b {
        return 0.0;
    }
    let chord = |x: f64| {
        let h = (s * s - (x - z[0]).powi(2)).max(0.0).sqrt();
        (hi[1].min(z[1] + h) - lo[1].max(z[1] - h)).max(0.0)
    };
    let mut breaks = Vec::new();
    for y in [lo[1], hi[1]] {
        let dy = y - z[1];
        if dy.abs() < s {
            let w = (s * s - dy * dy).sqrt();
            breaks.extend([z[0] - w, z[0] + w]);
        }
    }
    quad::integrate(chord, a, b, &breaks, Tolerance::new(1e-15, 1e-12))
        .unwrap_or_else(|_| GaussLegendre::new(64).integrate(a, b, chord))
}

impl MeasureSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let m: MeasureSpec = serde_json::from_str(text)?;
        m.validate()?;
        Ok(m)
    }

    pub fn single_atom(center: Vec<f64>, mass: f64) -> Self {
        Self {
            atoms: vec![Atom { center, mass }],
            densities: Vec::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty() && self.densities.is_empty()
    }

    /// Ambient dimension, `None` for the empty measure.
    pub fn dim(&self) -> Option<usize> {
        self.atoms
            .first()
            .map(|a| a.center.len())
            .or_else(|| self.densities.first().map(|d| d.region.dim()))
    }

    pub fn validate(&self) -> Result<()> {
        let Some(n) = self.dim() else { return Ok(()) };
        if n != 1 && n != 2 {
            return Err(invalid(format!("measure dimension must be 1 or 2, got {n}")));
        }
        for a in &self.atoms {
            if a.center.len() != n || a.center.iter().any(|v| !v.is_finite()) {
                return Err(invalid("atom centres must be finite points of a common dimension"));
            }
            if !(a.mass >= 0.0 && a.mass.is_finite()) {
                return Err(invalid(format!("atom mass must be nonnegative, got {}", a.mass)));
            }
        }
        for d in &self.densities {
            if d.region.dim() != n {
                return Err(invalid("density regions must share the atoms' dimension"));
            }
            if !(d.level >= 0.0 && d.level.is_finite()) {
                return Err(invalid(format!("density level must be nonnegative, got {}", d.level)));
            }
            match &d.region {
                Region::Ball { radius, .. } if !(*radius > 0.0 && radius.is_finite()) => {
                    return Err(invalid("ball radius must be positive"));
                }
                Region::Box { lo, hi } if hi.len() != n || lo.iter().zip(hi).any(|(a, b)| !(b > a)) => {
                    return Err(invalid("box corners must satisfy lo < hi"));
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn total_mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.mass).sum::<f64>()
            + self.densities.iter().map(|d| d.level * d.region.volume()).sum::<f64>()
    }

    /// Same shape with every mass and level multiplied by `lambda`.
    pub fn scaled(&self, lambda: f64) -> Self {
        let mut m = self.clone();
        m.atoms.iter_mut().for_each(|a| a.mass *= lambda);
        m.densities.iter_mut().for_each(|d| d.level *= lambda);
        m
    }

    pub fn translated(&self, v: &[f64]) -> Self {
        let shift = |p: &mut Vec<f64>| p.iter_mut().zip(v).for_each(|(x, d)| *x += d);
        let mut m = self.clone();
        m.atoms.iter_mut().for_each(|a| shift(&mut a.center));
        for d in &mut m.densities {
            match &mut d.region {
                Region::Ball { center, .. } => shift(center),
                Region::Box { lo, hi } => {
                    shift(lo);
                    shift(hi);
                }
            }
        }
        m
    }

    /// Sum of the density levels at `x`.
    pub fn density_at(&self, x: &[f64]) -> f64 {
        self.densities
            .iter()
            .filter(|d| d.region.contains(x))
            .map(|d| d.level)
            .sum()
    }

    /// μ(B̄(z, σ)); atoms on the sphere count as inside.
    pub fn mass_in_ball(&self, z: &[f64], sigma: f64) -> f64 {
        let reach = sigma * (1.0 + BALL_SLACK);
        let atoms: f64 = self
            .atoms
            .iter()
            .filter(|a| dist(&a.center, z) <= reach)
            .map(|a| a.mass)
            .sum();
        atoms
            + self
                .densities
                .iter()
                .map(|d| d.level * d.region.overlap(z, sigma))
                .sum::<f64>()
    }

    /// Bounding box of all atoms and regions.
    pub fn hull(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        let n = self.dim()?;
        let mut lo = vec![f64::INFINITY; n];
        let mut hi = vec![f64::NEG_INFINITY; n];
        let mut grow = |a: &[f64], b: &[f64]| {
            for k in 0..n {
                lo[k] = lo[k].min(a[k]);
                hi[k] = hi[k].max(b[k]);
            }
        };
        for a in &self.atoms {
            grow(&a.center, &a.center);
        }
        for d in &self.densities {
            let (a, b) = d.region.bounds();
            grow(&a, &b);
        }
        Some((lo, hi))
    }
}

/// max μ(B̄(z, σ)) over candidate centres: atoms, pairwise atom midpoints and
/// a lattice of pitch `search_resolution` over the hull of the support.
pub fn sup_ball_mass(mu: &MeasureSpec, sigma: f64, search_resolution: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(invalid(format!("sigma must be positive, got {sigma}")));
    }
    if !(search_resolution > 0.0) || search_resolution > sigma / 8.0 {
        return Err(invalid(format!(
            "search resolution {search_resolution} must lie in (0, σ/8]"
        )));
    }
    mu.validate()?;
    let Some((lo, hi)) = mu.hull() else { return Ok(0.0) };
    let n = lo.len();
    let counts: Vec<usize> = (0..n)
        .map(|k| ((hi[k] - lo[k]) / search_resolution).floor() as usize + 1)
        .collect();
    let lattice: usize = counts.iter().product();
    if lattice > MAX_CANDIDATES {
        return Err(invalid(format!(
            "search lattice of {lattice} centres is too large; raise the resolution"
        )));
    }
    let mut best: f64 = 0.0;
    for (i, a) in mu.atoms.iter().enumerate() {
        best = best.max(mu.mass_in_ball(&a.center, sigma));
        for b in &mu.atoms[i + 1..] {
            let mid: Vec<f64> = a.center.iter().zip(&b.center).map(|(x, y)| 0.5 * (x + y)).collect();
            best = best.max(mu.mass_in_ball(&mid, sigma));
        }
    }
    let lattice_best = (0..lattice)
        .into_par_iter()
        .map(|idx| {
            let mut z = [0.0; 2];
            let mut rem = idx;
            for k in (0..n).rev() {
                z[k] = lo[k] + (rem % counts[k]) as f64 * search_resolution;
                rem /= counts[k];
            }
            mu.mass_in_ball(&z[..n], sigma)
        })
        .reduce(|| 0.0, f64::max);
    Ok(best.max(lattice_best))
}

fn is_critical(p: f64, theta: f64, n_dim: usize) -> bool {
    let pc = 1.0 + theta / n_dim as f64;
    (p - pc).abs() <= 1e-12 * pc
}

/// `γ σ^{N − θ/(p−1)}` for p off the critical exponent.
pub fn subcritical_bound(sigma: f64, p: f64, theta: f64, n_dim: usize, gamma: f64) -> Result<f64> {
    if !(sigma > 0.0) || !(gamma > 0.0) || !(p > 1.0) {
        return Err(invalid("sigma and gamma must be positive and p > 1"));
    }
    if is_critical(p, theta, n_dim) {
        return Err(invalid(
            "p is the critical exponent 1 + θ/N; use critical_bound",
        ));
    }
    Ok(gamma * sigma.powf(n_dim as f64 - theta / (p - 1.0)))
}

/// `γ [log(e + T^{1/θ}/σ)]^{−N/θ}` for σ < T^{1/θ}.
pub fn critical_bound(sigma: f64, t_end: f64, theta: f64, n_dim: usize, gamma: f64) -> Result<f64> {
    let reach = t_end.powf(1.0 / theta);
    if !(sigma > 0.0) || sigma >= reach {
        return Err(invalid(format!("sigma {sigma} must lie in (0, T^(1/θ) = {reach})")));
    }
    if !(gamma > 0.0) {
        return Err(invalid("gamma must be positive"));
    }
    Ok(gamma * (E + reach / sigma).ln().powf(-(n_dim as f64) / theta))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Satisfied,
    Violated,
}

/// Per-σ comparison of the ball supremum with the applicable bound.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CapacityReport {
    pub sigma_grid: Vec<f64>,
    pub sup_ball_mass: Vec<f64>,
    pub bound_values: Vec<f64>,
    pub verdicts: Vec<Verdict>,
    pub gamma_used: f64,
    pub critical: bool,
    pub search_resolution_fraction: f64,
    /// Smallest σ of the grid where the bound fails.
    pub first_violation: Option<f64>,
    /// Largest σ of the grid where the bound fails.
    pub last_violation: Option<f64>,
}

impl CapacityReport {
    pub fn any_violated(&self) -> bool {
        self.verdicts.contains(&Verdict::Violated)
    }
}

/// Lattice pitch used by [`necessary_check`], as a fraction of σ.
pub const SEARCH_FRACTION: f64 = 0.125;

#[allow(clippy::too_many_arguments)]
pub fn necessary_check(
    mu: &MeasureSpec,
    t_end: f64,
    p: f64,
    theta: f64,
    n_dim: usize,
    gamma: f64,
    sigma_grid: &[f64],
) -> Result<CapacityReport> {
    let reach = t_end.powf(1.0 / theta);
    if sigma_grid.is_empty() || sigma_grid.iter().any(|&s| !(s > 0.0 && s < reach)) {
        return Err(invalid(format!("σ grid must be nonempty inside (0, {reach})")));
    }
    if let Some(n) = mu.dim() {
        if n != n_dim {
            return Err(invalid(format!("measure has dimension {n}, expected {n_dim}")));
        }
    }
    let critical = is_critical(p, theta, n_dim);
    let mut sup = Vec::with_capacity(sigma_grid.len());
    let mut bound = Vec::with_capacity(sigma_grid.len());
    let mut verdicts = Vec::with_capacity(sigma_grid.len());
    for &s in sigma_grid {
        let m = sup_ball_mass(mu, s, SEARCH_FRACTION * s)?;
        let b = if critical {
            critical_bound(s, t_end, theta, n_dim, gamma)?
        } else {
            subcritical_bound(s, p, theta, n_dim, gamma)?
        };
        verdicts.push(if m > b { Verdict::Violated } else { Verdict::Satisfied });
        sup.push(m);
        bound.push(b);
    }
    let violated = sigma_grid
        .iter()
        .zip(&verdicts)
        .filter(|(_, v)| **v == Verdict::Violated)
        .map(|(s, _)| *s);
    let first_violation = violated.clone().reduce(f64::min);
    let last_violation = violated.reduce(f64::max);
    Ok(CapacityReport {
        sigma_grid: sigma_grid.to_vec(),
        sup_ball_mass: sup,
        bound_values: bound,
        verdicts,
        gamma_used: gamma,
        critical,
        search_resolution_fraction: SEARCH_FRACTION,
        first_violation,
        last_violation,
    })
}

// CDF of the one-dimensional bump on [−1, 1], tabulated with its exact
// derivative for Hermite interpolation
struct BumpCdf {
    step: f64,
    values: Vec<f64>,
    mass: f64,
}

const CDF_NODES: usize = 4096;

fn bump_cdf() -> &'static BumpCdf {
    static TABLE: OnceLock<BumpCdf> = OnceLock::new();
    TABLE.get_or_init(|| {
        let gl = GaussLegendre::new(16);
        let step = 2.0 / CDF_NODES as f64;
        let mut values = Vec::with_capacity(CDF_NODES + 1);
        let mut acc = 0.0;
        values.push(0.0);
        for j in 0..CDF_NODES {
            let a = -1.0 + j as f64 * step;
            acc += gl.integrate(a, a + step, bump);
            values.push(acc);
        }
        let mass = acc;
        values.iter_mut().for_each(|v| *v /= mass);
        BumpCdf { step, values, mass }
    })
}

/// Smooth monotone step: 0 for u ≤ −1, 1 for u ≥ 1.
pub fn smooth_step(u: f64) -> f64 {
    if u <= -1.0 {
        return 0.0;
    }
    if u >= 1.0 {
        return 1.0;
    }
    let t = bump_cdf();
    let s = (u + 1.0) / t.step;
    let j = (s.floor() as usize).min(CDF_NODES - 1);
    let w = s - j as f64;
    let (y0, y1) = (t.values[j], t.values[j + 1]);
    let x0 = -1.0 + j as f64 * t.step;
    let d0 = bump(x0) / t.mass * t.step;
    let d1 = bump(x0 + t.step) / t.mass * t.step;
    let w2 = w * w;
    let w3 = w2 * w;
    (2.0 * w3 - 3.0 * w2 + 1.0) * y0 + (w3 - 2.0 * w2 + w) * d0 + (-2.0 * w3 + 3.0 * w2) * y1 + (w3 - w2) * d1
}

fn smooth_step_derivative(u: f64) -> f64 {
    if u.abs() >= 1.0 {
        0.0
    } else {
        bump(u) / bump_cdf().mass
    }
}

/// Temporal plateau ψ(t/H): 1 on [0, H/4], 0 on [3H/4, ∞).
#[derive(Debug, Clone, Copy, Serialize)]
pub struct TemporalCutoff {
    horizon: f64,
}

impl TemporalCutoff {
    pub fn new(horizon: f64) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(invalid(format!("horizon must be positive, got {horizon}")));
        }
        Ok(Self { horizon })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn eval(&self, t: f64) -> f64 {
        if t < 0.0 {
            return 0.0;
        }
        1.0 - smooth_step(4.0 * (t / self.horizon - 0.5))
    }

    pub fn derivative(&self, t: f64) -> f64 {
        if t < 0.0 {
            return 0.0;
        }
        -4.0 / self.horizon * smooth_step_derivative(4.0 * (t / self.horizon - 0.5))
    }

    /// End of the support, 3H/4.
    pub fn support_end(&self) -> f64 {
        0.75 * self.horizon
    }
}

/// ζ_σ(x − c) ψ(t) with ζ_σ = 1 on B(0, σ/2), supported in B(0, σ).
#[derive(Debug, Clone)]
pub struct CutoffPair {
    sigma: f64,
    theta: f64,
    center: Vec<f64>,
    spatial: Field,
    image: Field,
    temporal: TemporalCutoff,
}

/// Radial profile of ζ: 1 for r ≤ 1/2, 0 for r ≥ 1.
pub fn zeta_profile(r: f64) -> f64 {
    1.0 - smooth_step(4.0 * (r - 0.75))
}

/// ζ_σ and ψ_σ(t) = ψ(t/σ^θ) centred at the origin.
pub fn build_cutoff(sigma: f64, theta: f64, grid: &Grid) -> Result<CutoffPair> {
    CutoffPair::new(sigma, theta, grid, &vec![0.0; grid.dim()], sigma.powf(theta))
}

impl CutoffPair {
    /// Cutoff of radius σ centred at `center` with temporal horizon H.
    pub fn new(sigma: f64, theta: f64, grid: &Grid, center: &[f64], horizon: f64) -> Result<Self> {
        if !(theta > 0.0 && theta <= 2.0) {
            return Err(invalid(format!("theta must lie in (0, 2], got {theta}")));
        }
        if center.len() != grid.dim() {
            return Err(invalid("centre dimension differs from the grid"));
        }
        if !(sigma >= 8.0 * grid.spacing()) {
            return Err(invalid(format!(
                "σ = {sigma} is under-resolved: needs at least 8 grid spacings ({})",
                8.0 * grid.spacing()
            )));
        }
        if sigma >= grid.extent() {
            return Err(invalid("cutoff ball does not fit in the periodic box"));
        }
        let temporal = TemporalCutoff::new(horizon)?;
        let c = [center[0], center.get(1).copied().unwrap_or(0.0)];
        let spatial = Field::from_fn(*grid, |x| {
            let dx = grid.wrap(x[0] - c[0]);
            let dy = if grid.dim() == 2 { grid.wrap(x[1] - c[1]) } else { 0.0 };
            zeta_profile((dx * dx + dy * dy).sqrt() / sigma)
        });
        let image = SpectralOperator::new(*grid).fraclap(&spatial, theta);
        Ok(Self {
            sigma,
            theta,
            center: center.to_vec(),
            spatial,
            image,
            temporal,
        })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    /// ζ_σ sampled on the grid.
    pub fn spatial(&self) -> &Field {
        &self.spatial
    }

    /// (−Δ)^{θ/2} ζ_σ on the grid.
    pub fn image(&self) -> &Field {
        &self.image
    }

    pub fn temporal(&self) -> &TemporalCutoff {
        &self.temporal
    }

    pub fn zeta(&self, x: &[f64]) -> f64 {
        zeta_profile(dist(x, &self.center) / self.sigma)
    }

    pub fn eval(&self, x: &[f64], t: f64) -> f64 {
        self.zeta(x) * self.temporal.eval(t)
    }
}

/// A space-time function sampled on a periodic grid at times k·dt.
#[derive(Debug, Clone)]
pub struct SpaceTimeField {
    dt: f64,
    frames: Vec<Field>,
}

impl SpaceTimeField {
    pub fn new(dt: f64, frames: Vec<Field>) -> Result<Self> {
        if !(dt > 0.0) || frames.len() < 3 {
            return Err(invalid("need dt > 0 and at least three frames"));
        }
        let g = *frames[0].grid();
        if frames.iter().any(|f| *f.grid() != g) {
            return Err(invalid("frames live on different grids"));
        }
        Ok(Self { dt, frames })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn frames(&self) -> &[Field] {
        &self.frames
    }

    pub fn horizon(&self) -> f64 {
        self.dt * (self.frames.len() - 1) as f64
    }

    pub fn eval(&self, x: &[f64], t: f64) -> f64 {
        if t < 0.0 || t > self.horizon() {
            return 0.0;
        }
        let m = self.frames.len() - 1;
        let pos = t / self.dt;
        let k = (pos.floor() as usize).min(m - 1);
        let w = pos - k as f64;
        (1.0 - w) * self.frames[k].interpolate(x) + w * self.frames[k + 1].interpolate(x)
    }
}

/// Test functions accepted by [`kihon_rhs`] and [`kihon_lhs`].
#[derive(Debug, Clone)]
pub enum TestFn {
    Cutoff(CutoffPair),
    Adjoint(TestFunction),
    Sampled(SpaceTimeField),
}

impl TestFn {
    pub fn eval(&self, x: &[f64], t: f64) -> f64 {
        match self {
            TestFn::Cutoff(c) => c.eval(x, t),
            TestFn::Adjoint(a) => a.eval(x, t),
            TestFn::Sampled(s) => s.eval(x, t),
        }
    }

    pub fn horizon(&self) -> f64 {
        match self {
            TestFn::Cutoff(c) => c.temporal.horizon,
            TestFn::Adjoint(a) => a.horizon(),
            TestFn::Sampled(s) => s.horizon(),
        }
    }
}

/// `∫∫ |(−∂_t + (−Δ)^{θ/2})φ|^{p/(p−1)} dx dt`.
pub fn kihon_rhs(phi: &TestFn, p: f64, theta: f64) -> Result<f64> {
    if !(p > 1.0) {
        return Err(invalid(format!("p must exceed 1, got {p}")));
    }
    let q = p / (p - 1.0);
    match phi {
        TestFn::Cutoff(c) => {
            if c.theta != theta {
                return Err(invalid("cutoff was built for a different theta"));
            }
            Ok(cutoff_rhs(c, q))
        }
        TestFn::Adjoint(tf) => adjoint_rhs(tf, p, theta),
        TestFn::Sampled(s) => sampled_rhs(s, q, theta),
    }
}

fn cutoff_rhs(c: &CutoffPair, q: f64) -> f64 {
    let psi = c.temporal;
    let gl = GaussLegendre::new(16);
    let end = psi.support_end();
    let panels = 32;
    let mut nodes = Vec::with_capacity(16 * panels);
    for k in 0..panels {
        let a = end * k as f64 / panels as f64;
        let b = end * (k + 1) as f64 / panels as f64;
        nodes.extend(gl.mapped(a, b).map(|(t, w)| (psi.eval(t), psi.derivative(t), w)));
    }
    let vol = c.spatial.grid().cell_volume();
    let z = c.spatial.values();
    let l = c.image.values();
    let total: f64 = (0..z.len())
        .into_par_iter()
        .map(|i| {
            nodes
                .iter()
                .map(|&(v, d, w)| w * (-z[i] * d + v * l[i]).abs().powf(q))
                .sum::<f64>()
        })
        .sum();
    total * vol
}

// Along the level sets s = |x|^θ + t the source is constant and
// |{x : |x|^θ ≤ s}| = ω_N s^{N/θ}, reducing the space-time integral to one
// dimension.
fn adjoint_rhs(tf: &TestFunction, p: f64, theta: f64) -> Result<f64> {
    if tf.theta() != theta {
        return Err(invalid("test function was built for a different theta"));
    }
    let n = tf.grid().dim();
    if !is_critical(p, theta, n) {
        return Err(invalid(format!(
            "p = {p} is not the critical exponent {}",
            1.0 + theta / n as f64
        )));
    }
    if tf.forcing().is_zero() {
        return Ok(0.0);
    }
    let q = p / (p - 1.0);
    let tau = tf.tau_scale();
    let c = tf.c_delta();
    let f = *tf.forcing();
    let k = n as f64 / theta;
    let breaks = f.breakpoints();
    let inner = quad::integrate(
        |u| f.eval(u).powf(q) * u.powf(k),
        0.0,
        0.5,
        &breaks,
        Tolerance::new(1e-16, 1e-12),
    )?;
    Ok(unit_ball_volume(n) * c.powf(q) * tau.powf(1.0 - q + k) * inner)
}

fn sampled_rhs(s: &SpaceTimeField, q: f64, theta: f64) -> Result<f64> {
    let frames = &s.frames;
    let m = frames.len() - 1;
    let scale = frames.iter().map(|f| f.max_abs()).fold(1.0f64, f64::max);
    if frames.iter().any(|f| f.min() < -NEGATIVE_ROUNDING * scale) {
        return Err(Error::Negative("test function takes negative values".into()));
    }
    let last = frames[m].max_abs();
    if last > TERMINAL_VALUE {
        return Err(Error::NonzeroTerminal(format!("max |φ(T)| = {last:e}")));
    }
    let grid = *frames[0].grid();
    let op = SpectralOperator::new(grid);
    let symbol = op.fraclap_symbol(theta);
    let dt = s.dt;
    let slice: Vec<f64> = (0..=m)
        .into_par_iter()
        .map(|k| {
            let l = op.apply_factors(frames[k].values(), &symbol);
            let (a, b, span) = match k {
                0 => (0, 1, dt),
                _ if k == m => (m - 1, m, dt),
                _ => (k - 1, k + 1, 2.0 * dt),
            };
            let fa = frames[a].values();
            let fb = frames[b].values();
            l.iter()
                .enumerate()
                .map(|(i, li)| (-(fb[i] - fa[i]) / span + li).abs().powf(q))
                .sum::<f64>()
                * grid.cell_volume()
        })
        .collect();
    let inner: f64 = slice[1..m].iter().sum();
    Ok(dt * (inner + 0.5 * (slice[0] + slice[m])))
}

/// `∫ φ(x, 0)^{p/(p−1)} dμ(x)`.
pub fn kihon_lhs(phi: &TestFn, mu: &MeasureSpec, p: f64) -> Result<f64> {
    if !(p > 1.0) {
        return Err(invalid(format!("p must exceed 1, got {p}")));
    }
    mu.validate()?;
    let q = p / (p - 1.0);
    let g = |x: &[f64]| phi.eval(x, 0.0).max(0.0).powf(q);
    let atoms: f64 = mu.atoms.iter().map(|a| a.mass * g(&a.center)).sum();
    let mut dens = 0.0;
    for d in &mu.densities {
        dens += d.level * region_integral(&d.region, &g);
    }
    Ok(atoms + dens)
}

// composite Gauss–Legendre over the region's bounding box, masked to the region
pub(crate) fn region_integral<G: Fn(&[f64]) -> f64 + Sync>(region: &Region, g: &G) -> f64 {
    let gl = GaussLegendre::new(8);
    let (lo, hi) = region.bounds();
    let panels = 256;
    let axis = |k: usize| -> Vec<(f64, f64)> {
        (0..panels)
            .flat_map(|j| {
                let a = lo[k] + (hi[k] - lo[k]) * j as f64 / panels as f64;
                let b = lo[k] + (hi[k] - lo[k]) * (j + 1) as f64 / panels as f64;
                gl.mapped(a, b).collect::<Vec<_>>()
            })
            .collect()
    };
    let xs = axis(0);
    match lo.len() {
        1 => xs.iter().map(|&(x, w)| w * g(&[x])).sum(),
        _ => {
            let ys = axis(1);
            xs.par_iter()
                .map(|&(x, wx)| {
                    ys.iter()
                        .filter(|&&(y, _)| region.contains(&[x, y]))
                        .map(|&(y, wy)| wx * wy * g(&[x, y]))
                        .sum::<f64>()
                })
                .sum()
        }
    }
}

/// Constant fitted on a reference pair and the worst ratio over the rest.
#[derive(Debug, Clone, Serialize)]
pub struct KihonFit {
    pub constant: f64,
    pub worst_ratio: f64,
    pub stable: bool,
}

/// Fits `C = lhs/rhs` on the first `(lhs, rhs)` pair and checks
/// `lhs ≤ 2 C rhs` for every pair.
pub fn fit_kihon_constant(pairs: &[(f64, f64)]) -> Result<KihonFit> {
    let Some(&(l0, r0)) = pairs.first() else {
        return Err(invalid("no test functions"));
    };
    if !(r0 > 0.0) {
        return Err(invalid("reference right-hand side must be positive"));
    }
    let constant = l0 / r0;
    let mut worst: f64 = 0.0;
    for &(l, r) in pairs {
        let ratio = if l == 0.0 { 0.0 } else if r > 0.0 { l / (constant * r) } else { f64::INFINITY };
        worst = worst.max(ratio);
    }
    Ok(KihonFit {
        constant,
        worst_ratio: worst,
        stable: worst <= 2.0,
    })
}
