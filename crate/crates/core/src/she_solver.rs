//! Forward integration of `∂_t u + (−Δ)^{θ/2} u = u^p` on the periodic box
//! from measure data, with blow-up detection, a Picard iteration of the
//! Duhamel formula, solution residuals and threshold sweeps.
//!
//! Runs start at `t0 > 0` from `u(t0) = Γ_θ(t0) ∗ μ`.

use std::f64::consts::PI;

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::capacity::{region_integral, CutoffPair, MeasureSpec};
use crate::error::{invalid, Error, Result};
use crate::kernel::KernelEvaluator;
use crate::quad::GaussLegendre;
use crate::spectral_core::{Field, FracParams, Grid, SpectralOperator};
use crate::tolerances::{
    ESSENTIAL_SUPPORT_LEVEL, GROWTH_RATIO, NEGATIVE_ROUNDING, PICARD_CONVERGENCE,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    IntegratingFactor,
    PicardDuhamel,
}

fn default_threshold() -> f64 {
    1e8
}
fn default_true() -> bool {
    true
}
fn default_snapshots() -> usize {
    64
}
fn default_picard_steps() -> usize {
    256
}
fn default_picard_iter() -> usize {
    60
}
fn default_support_level() -> f64 {
    ESSENTIAL_SUPPORT_LEVEL
}
fn default_max_steps() -> usize {
    1_000_000
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolverConfig {
    pub params: FracParams,
    pub grid: Grid,
    pub t_end: f64,
    pub dt_init: f64,
    #[serde(default = "default_threshold")]
    pub blowup_threshold: f64,
    pub scheme: Scheme,
    /// Start time of the run; `None` selects `t_end/100`.
    #[serde(default)]
    pub t0: Option<f64>,
    /// With `false` the nonlinearity is switched off.
    #[serde(default = "default_true")]
    pub nonlinear: bool,
    /// Number of equal intervals between stored states.
    #[serde(default = "default_snapshots")]
    pub snapshots: usize,
    #[serde(default = "default_picard_steps")]
    pub picard_steps: usize,
    #[serde(default = "default_picard_iter")]
    pub picard_max_iter: usize,
    #[serde(default = "default_true")]
    pub monitor_domain: bool,
    #[serde(default = "default_support_level")]
    pub support_level: f64,
    #[serde(default = "default_max_steps")]
    pub max_steps: usize,
}

impl SolverConfig {
    /// Defaults for everything except the physical setup.
    pub fn new(params: FracParams, grid: Grid, t_end: f64) -> Self {
        Self {
            params,
            grid,
            t_end,
            dt_init: t_end / 64.0,
            blowup_threshold: default_threshold(),
            scheme: Scheme::IntegratingFactor,
            t0: None,
            nonlinear: true,
            snapshots: default_snapshots(),
            picard_steps: default_picard_steps(),
            picard_max_iter: default_picard_iter(),
            monitor_domain: true,
            support_level: default_support_level(),
            max_steps: default_max_steps(),
        }
    }

    pub fn start_time(&self) -> f64 {
        self.t0.unwrap_or(self.t_end / 100.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return Err(invalid("t_end must be positive"));
        }
        if !(self.dt_init > 0.0) || self.dt_init > self.t_end / 64.0 {
            return Err(invalid(format!(
                "dt_init {} must lie in (0, t_end/64]",
                self.dt_init
            )));
        }
        if !(self.blowup_threshold > 1.0) {
            return Err(invalid("blowup_threshold must exceed 1"));
        }
        let t0 = self.start_time();
        if !(t0 > 0.0) || t0 > self.t_end / 100.0 * (1.0 + 1e-12) {
            return Err(invalid(format!("t0 = {t0} must lie in (0, t_end/100]")));
        }
        if self.grid.dim() != self.params.n_dim {
            return Err(invalid("grid and parameter dimensions differ"));
        }
        if self.snapshots < 2 || self.picard_steps < 2 {
            return Err(invalid("snapshots and picard_steps must be at least 2"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Status {
    Completed,
    BlewUp { t_blow: f64 },
    Stalled,
}

impl Status {
    pub fn blew_up(&self) -> bool {
        matches!(self, Status::BlewUp { .. })
    }

    pub fn t_blow(&self) -> Option<f64> {
        match self {
            Status::BlewUp { t_blow } => Some(*t_blow),
            _ => None,
        }
    }
}

/// Per-step diagnostics.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct SeriesPoint {
    pub t: f64,
    pub sup: f64,
    pub mass: f64,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub params: FracParams,
    pub t0: f64,
    pub t_end: f64,
    pub nonlinear: bool,
    pub times: Vec<f64>,
    pub states: Vec<Field>,
    /// `None` when the run started from a field rather than a measure.
    pub initial_measure: Option<MeasureSpec>,
    pub status: Status,
    pub series: Vec<SeriesPoint>,
    /// Largest negative value clamped to zero, relative to the state max.
    pub max_clamp: f64,
    pub steps: usize,
}

impl Trajectory {
    pub fn grid(&self) -> &Grid {
        self.states[0].grid()
    }

    pub fn final_state(&self) -> &Field {
        self.states.last().expect("trajectory holds at least one state")
    }

    /// State at time `t`, linear between stored states.
    pub fn state_at(&self, t: f64) -> Option<Field> {
        let k = self.times.iter().position(|&s| s >= t - 1e-12 * self.t_end)?;
        if (self.times[k] - t).abs() <= 1e-12 * self.t_end || k == 0 {
            return Some(self.states[k].clone());
        }
        let (a, b) = (self.times[k - 1], self.times[k]);
        let w = (t - a) / (b - a);
        Some(self.states[k - 1].zip_map(&self.states[k], |x, y| (1.0 - w) * x + w * y))
    }
}

// Σ_{k ∉ [−K, K]^N} |k|^{−e}
fn lattice_tail(n_dim: usize, e: f64, k: i64) -> f64 {
    const FAR: i64 = 400;
    let far = FAR as f64 + 0.5;
    match n_dim {
        1 => {
            let s: f64 = (k + 1..=FAR).map(|j| (j as f64).powf(-e)).sum();
            2.0 * (s + far.powf(1.0 - e) / (e - 1.0))
        }
        _ => {
            let mut s = 0.0;
            for a in -FAR..=FAR {
                for b in -FAR..=FAR {
                    if a.abs().max(b.abs()) > k {
                        s += ((a * a + b * b) as f64).powf(-0.5 * e);
                    }
                }
            }
            s + 2.0 * PI * far.powf(2.0 - e) / (e - 2.0)
        }
    }
}

/// Periodised Γ_θ(·, t) sampled at the offsets `x_i − c`: images within
/// `[−K, K]^N` explicitly, the rest through the `a t |x|^{−N−θ}` tail law
/// expanded to second order in the offset.
fn periodic_kernel_samples(kernel: &KernelEvaluator, grid: &Grid, center: [f64; 2], t: f64) -> Result<Vec<f64>> {
    let params = kernel.params();
    let n = params.n_dim;
    let period = 2.0 * grid.extent();
    let images: i64 = if params.theta == 2.0 { 2 } else { 4 };
    let (tail0, tail2) = if params.theta < 2.0 {
        let s = n as f64 + params.theta;
        let a = kernel.tail_coefficient()? * t;
        // lattice average of |x + y|^{−s} − |y|^{−s} is c|x|²|y|^{−s−2}
        let c = if n == 1 { 0.5 * s * (s + 1.0) } else { 0.25 * s * s };
        (
            a * period.powf(-s) * lattice_tail(n, s, images),
            a * c * period.powf(-s - 2.0) * lattice_tail(n, s + 2.0, images),
        )
    } else {
        (0.0, 0.0)
    };
    let out = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let p = grid.point(i);
            let dx = grid.wrap(p[0] - center[0]);
            let dy = if n == 2 { grid.wrap(p[1] - center[1]) } else { 0.0 };
            let mut s = tail0 + tail2 * (dx * dx + dy * dy);
            for a in -images..=images {
                let x = dx + a as f64 * period;
                if n == 1 {
                    s += kernel.eval_radial(x.abs(), t);
                } else {
                    for b in -images..=images {
                        let y = dy + b as f64 * period;
                        s += kernel.eval_radial((x * x + y * y).sqrt(), t);
                    }
                }
            }
            s
        })
        .collect();
    Ok(out)
}

fn cell_average_density(mu: &MeasureSpec, grid: &Grid) -> Vec<f64> {
    let h = grid.spacing();
    let n = grid.dim();
    const SUB: usize = 8;
    (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let p = grid.point(i);
            if n == 1 {
                // exact cell overlap
                mu.densities
                    .iter()
                    .map(|d| {
                        let (lo, hi) = match &d.region {
                            crate::capacity::Region::Ball { center, radius } => (center[0] - radius, center[0] + radius),
                            crate::capacity::Region::Box { lo, hi } => (lo[0], hi[0]),
                        };
                        d.level * ((hi.min(p[0] + 0.5 * h) - lo.max(p[0] - 0.5 * h)).max(0.0)) / h
                    })
                    .sum()
            } else {
                let mut s = 0.0;
                for a in 0..SUB {
                    for b in 0..SUB {
                        let x = p[0] + h * ((a as f64 + 0.5) / SUB as f64 - 0.5);
                        let y = p[1] + h * ((b as f64 + 0.5) / SUB as f64 - 0.5);
                        s += mu.density_at(&[x, y]);
                    }
                }
                s / (SUB * SUB) as f64
            }
        })
        .collect()
}

/// `Γ_θ(t0) ∗ μ` on the periodic grid.
pub fn mollify_initial(mu: &MeasureSpec, t0: f64, grid: &Grid, params: &FracParams) -> Result<Field> {
    if !(t0 > 0.0) {
        return Err(invalid(format!("t0 must be positive, got {t0}")));
    }
    mu.validate()?;
    if grid.dim() != params.n_dim || mu.dim().is_some_and(|d| d != params.n_dim) {
        return Err(invalid("measure, grid and parameters must share the dimension"));
    }
    let mut out = vec![0.0; grid.len()];
    if mu.is_empty() {
        return Field::new(*grid, out);
    }
    let kernel = KernelEvaluator::with_defaults(*params)?;
    for atom in &mu.atoms {
        if atom.mass == 0.0 {
            continue;
        }
        let c = [atom.center[0], atom.center.get(1).copied().unwrap_or(0.0)];
        let k = periodic_kernel_samples(&kernel, grid, c, t0)?;
        out.iter_mut().zip(&k).for_each(|(o, v)| *o += atom.mass * v);
    }
    if !mu.densities.is_empty() {
        let rho = cell_average_density(mu, grid);
        let mut k = periodic_kernel_samples(&kernel, grid, [0.0, 0.0], t0)?;
        let discrete: f64 = k.iter().sum::<f64>() * grid.cell_volume();
        k.iter_mut().for_each(|v| *v /= discrete);
        // kernel offsets are indexed from the first grid point
        let shift = grid.points_per_axis() / 2;
        let k = recentre(&k, grid, shift);
        let conv = SpectralOperator::new(*grid).convolve(&rho, &k);
        out.iter_mut().zip(&conv).for_each(|(o, v)| *o += v.max(0.0));
    }
    Field::new(*grid, out)
}

// moves the sample at the box centre to index 0
fn recentre(v: &[f64], grid: &Grid, shift: usize) -> Vec<f64> {
    let n = grid.points_per_axis();
    match grid.dim() {
        1 => (0..n).map(|i| v[(i + shift) % n]).collect(),
        _ => (0..n * n)
            .map(|idx| {
                let (a, b) = (idx / n, idx % n);
                v[((a + shift) % n) * n + (b + shift) % n]
            })
            .collect(),
    }
}

struct Stepper {
    op: SpectralOperator,
    symbol: Vec<f64>,
    p: f64,
    nonlinear: bool,
}

impl Stepper {
    fn new(config: &SolverConfig) -> Self {
        let op = SpectralOperator::new(config.grid);
        let symbol = op.fraclap_symbol(config.params.theta);
        Self {
            op,
            symbol,
            p: config.params.p_exponent,
            nonlinear: config.nonlinear,
        }
    }

    fn propagate(&self, u: &[f64], h: f64) -> Vec<f64> {
        let f: Vec<f64> = self.symbol.iter().map(|s| (-h * s).exp()).collect();
        self.op.apply_factors(u, &f)
    }

    fn nonlin(&self, u: &[f64]) -> Vec<f64> {
        u.iter().map(|&v| v.max(0.0).powf(self.p)).collect()
    }

    /// Integrating-factor RK4 step of size h.
    fn step(&self, u: &[f64], h: f64) -> Vec<f64> {
        if !self.nonlinear {
            return self.propagate(u, h);
        }
        let axpy = |a: &[f64], c: f64, b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(x, y)| x + c * y).collect() };
        let fh = |v: &[f64]| self.propagate(v, 0.5 * h);
        let k1 = self.nonlin(u);
        let eu = fh(u);
        let k2 = self.nonlin(&fh(&axpy(u, 0.5 * h, &k1)));
        let k3 = self.nonlin(&axpy(&eu, 0.5 * h, &k2));
        let k4 = self.nonlin(&fh(&axpy(&eu, h, &k3)));
        let inner = fh(&axpy(u, h / 6.0, &k1));
        let mid: Vec<f64> = inner
            .iter()
            .zip(k2.iter().zip(&k3))
            .map(|(a, (b, c))| a + h / 3.0 * (b + c))
            .collect();
        let out = fh(&mid);
        axpy(&out, h / 6.0, &k4)
    }
}

fn sup(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

// clamps rounding negatives; returns the largest clamp relative to the max
fn clamp_negatives(v: &mut [f64], t: f64) -> Result<f64> {
    let scale = sup(v).max(f64::MIN_POSITIVE);
    let mut worst: f64 = 0.0;
    for x in v.iter_mut() {
        if *x < 0.0 {
            worst = worst.max(-*x / scale);
            *x = 0.0;
        }
    }
    if worst > NEGATIVE_ROUNDING {
        return Err(Error::Negative(format!(
            "state at t = {t} dipped to {worst:e} of its max; the grid under-resolves the solution"
        )));
    }
    Ok(worst)
}

fn domain_check(config: &SolverConfig, u: &[f64], t: f64) -> Result<()> {
    if !config.monitor_domain {
        return Ok(());
    }
    let grid = &config.grid;
    let m = sup(u);
    if m == 0.0 {
        return Ok(());
    }
    let level = config.support_level * m;
    let reach = (0..u.len())
        .filter(|&i| u[i] >= level)
        .map(|i| {
            let p = grid.point(i);
            p[0].abs().max(if grid.dim() == 2 { p[1].abs() } else { 0.0 })
        })
        .fold(0.0f64, f64::max);
    let width = 2.0 * t.powf(1.0 / config.params.theta);
    if reach + width > grid.extent() {
        return Err(Error::DomainTooSmall {
            t,
            detail: format!(
                "essential support reaches {reach:.4} and the kernel width is {width:.4}, box half-width {}",
                grid.extent()
            ),
        });
    }
    Ok(())
}

/// Runs the integrating-factor scheme from `Γ_θ(t0) ∗ μ`.
pub fn integrate(config: &SolverConfig, mu: &MeasureSpec) -> Result<Trajectory> {
    config.validate()?;
    let t0 = config.start_time();
    let u0 = mollify_initial(mu, t0, &config.grid, &config.params)?;
    let mut traj = integrate_from(config, u0)?;
    traj.initial_measure = Some(mu.clone());
    Ok(traj)
}

/// Runs the integrating-factor scheme from a given state at `t0`.
pub fn integrate_from(config: &SolverConfig, initial: Field) -> Result<Trajectory> {
    config.validate()?;
    if *initial.grid() != config.grid {
        return Err(invalid("initial state lives on a different grid"));
    }
    let t0 = config.start_time();
    let t_end = config.t_end;
    let stepper = Stepper::new(config);
    let vol = config.grid.cell_volume();
    let snap_dt = (t_end - t0) / config.snapshots as f64;
    let snap_time = |j: usize| if j == config.snapshots { t_end } else { t0 + j as f64 * snap_dt };

    let mut u = initial.into_values();
    let mut max_clamp = clamp_negatives(&mut u, t0)?;
    domain_check(config, &u, t0)?;
    let mut t = t0;
    let mut dt = config.dt_init;
    let mut times = vec![t0];
    let mut states = vec![Field::new(config.grid, u.clone())?];
    let mut series = vec![SeriesPoint {
        t,
        sup: sup(&u),
        mass: u.iter().sum::<f64>() * vol,
    }];
    let mut next = 1;
    let mut steps = 0;
    let mut status = Status::Completed;
    while next <= config.snapshots {
        let target = snap_time(next);
        let mut h = dt.min(target - t);
        let before = sup(&u);
        let (mut v, growth) = loop {
            let v = stepper.step(&u, h);
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite {
                    t,
                    last_max: before,
                    state: u,
                });
            }
            let growth = if before > 0.0 { sup(&v) / before } else { 1.0 };
            if growth > GROWTH_RATIO {
                dt = 0.5 * h;
                h = dt;
                if dt < 1e-12 * t_end {
                    break (v, f64::NAN);
                }
                continue;
            }
            break (v, growth);
        };
        if growth.is_nan() {
            status = Status::BlewUp { t_blow: t };
            break;
        }
        max_clamp = max_clamp.max(clamp_negatives(&mut v, t + h)?);
        t = if h == target - t { target } else { t + h };
        u = v;
        steps += 1;
        let s = sup(&u);
        series.push(SeriesPoint {
            t,
            sup: s,
            mass: u.iter().sum::<f64>() * vol,
        });
        if s >= config.blowup_threshold {
            status = Status::BlewUp { t_blow: t };
            break;
        }
        domain_check(config, &u, t)?;
        if t == target {
            times.push(t);
            states.push(Field::new(config.grid, u.clone())?);
            next += 1;
        }
        if growth < 1.05 && h >= dt {
            dt = (2.0 * dt).min(config.dt_init);
        }
        if steps >= config.max_steps {
            status = Status::Stalled;
            break;
        }
    }
    if status != Status::Completed && *times.last().unwrap() < t {
        times.push(t);
        states.push(Field::new(config.grid, u)?);
    }
    Ok(Trajectory {
        params: config.params,
        t0,
        t_end,
        nonlinear: config.nonlinear,
        times,
        states,
        initial_measure: None,
        status,
        series,
        max_clamp,
        steps,
    })
}

// per-mode exponential-integrator weights for a step Δ: decay, weight of
// the left sample and weight of the right sample
fn etd_weights(symbol: &[f64], dt: f64) -> Vec<(f64, f64, f64)> {
    symbol
        .iter()
        .map(|&s| {
            let z = s * dt;
            let e = (-z).exp();
            let (p1, p2) = if z < 1e-3 {
                (
                    1.0 - z / 2.0 + z * z / 6.0 - z * z * z / 24.0,
                    0.5 - z / 6.0 + z * z / 24.0 - z * z * z / 120.0,
                )
            } else {
                ((1.0 - e) / z, (z - 1.0 + e) / (z * z))
            };
            (e, dt * (p1 - p2), dt * p2)
        })
        .collect()
}

/// `∫_{t_0}^{t_k} e^{−(t_k−s)(−Δ)^{θ/2}} g(s) ds` at equally spaced times
/// for `g` linear between samples.
fn duhamel_series(op: &SpectralOperator, weights: &[(f64, f64, f64)], g: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = g[0].len();
    let mut acc = vec![Complex64::new(0.0, 0.0); n];
    let mut out = vec![vec![0.0; n]];
    let mut prev = op.forward(&g[0]);
    for gk in &g[1..] {
        let cur = op.forward(gk);
        for (i, a) in acc.iter_mut().enumerate() {
            let (e, w0, w1) = weights[i];
            *a = e * *a + w0 * prev[i] + w1 * cur[i];
        }
        out.push(op.inverse_real(acc.clone()));
        prev = cur;
    }
    out
}

#[derive(Debug, Clone)]
pub struct PicardResult {
    pub trajectory: Trajectory,
    pub iterations: usize,
    pub converged: bool,
    /// Last max-norm change relative to the iterate max.
    pub last_increment: f64,
}

/// Fixed-point iteration of the Duhamel formula on `config.picard_steps`
/// equal time steps over `[t0, T]`, seeded with the linear flow.
pub fn picard_duhamel(config: &SolverConfig, mu: &MeasureSpec, max_iter: usize) -> Result<PicardResult> {
    config.validate()?;
    if max_iter < 3 {
        return Err(invalid("max_iter must be at least 3"));
    }
    let t0 = config.start_time();
    let u0 = mollify_initial(mu, t0, &config.grid, &config.params)?;
    let op = SpectralOperator::new(config.grid);
    let symbol = op.fraclap_symbol(config.params.theta);
    let steps = config.picard_steps;
    let dt = (config.t_end - t0) / steps as f64;
    let decay: Vec<f64> = symbol.iter().map(|s| (-dt * s).exp()).collect();
    let mut seed = vec![u0.values().to_vec()];
    for k in 0..steps {
        let mut next = op.apply_factors(&seed[k], &decay);
        clamp_negatives(&mut next, t0 + (k + 1) as f64 * dt)?;
        seed.push(next);
    }
    let weights = etd_weights(&symbol, dt);
    let p = config.params.p_exponent;
    let mut horizon = steps;
    let mut current = seed.clone();
    let mut iterations = 0;
    let mut converged = false;
    let mut increment = f64::INFINITY;
    let mut diverged = false;
    while iterations < max_iter {
        iterations += 1;
        let g: Vec<Vec<f64>> = current[..=horizon]
            .iter()
            .map(|u| if config.nonlinear { u.iter().map(|v| v.max(0.0).powf(p)).collect() } else { vec![0.0; u.len()] })
            .collect();
        let d = duhamel_series(&op, &weights, &g);
        let mut next: Vec<Vec<f64>> = Vec::with_capacity(horizon + 1);
        for k in 0..=horizon {
            let mut v: Vec<f64> = seed[k].iter().zip(&d[k]).map(|(a, b)| a + b).collect();
            if v.iter().any(|x| !x.is_finite()) {
                v = vec![f64::INFINITY; v.len()];
            } else {
                clamp_negatives(&mut v, t0 + k as f64 * dt)?;
            }
            next.push(v);
        }
        if let Some(k) = next.iter().position(|v| sup(v) >= config.blowup_threshold) {
            // Volterra structure: earlier times do not see later ones
            diverged = true;
            horizon = k.saturating_sub(1);
            next.truncate(horizon + 1);
            current.truncate(horizon + 1);
            if horizon == 0 {
                current = next;
                break;
            }
        }
        let scale = next.iter().map(|v| sup(v)).fold(0.0f64, f64::max);
        let mut diff: f64 = 0.0;
        for (a, b) in next.iter().zip(&current) {
            for (x, y) in a.iter().zip(b) {
                if *x < *y - NEGATIVE_ROUNDING * scale.max(1.0) * 1e2 {
                    return Err(Error::NonMonotone(format!(
                        "Picard iterate {iterations} decreased by {:e}",
                        y - x
                    )));
                }
                diff = diff.max((x - y).abs());
            }
        }
        current = next;
        increment = if scale > 0.0 { diff / scale } else { 0.0 };
        if increment <= PICARD_CONVERGENCE {
            converged = true;
            break;
        }
    }
    let times: Vec<f64> = (0..=horizon).map(|k| t0 + k as f64 * dt).collect();
    let vol = config.grid.cell_volume();
    let series = current
        .iter()
        .zip(&times)
        .map(|(u, &t)| SeriesPoint {
            t,
            sup: sup(u),
            mass: u.iter().sum::<f64>() * vol,
        })
        .collect();
    let states = current
        .into_iter()
        .map(|v| Field::new(config.grid, v))
        .collect::<Result<Vec<_>>>()?;
    let status = if diverged {
        Status::BlewUp { t_blow: t0 + (horizon + 1) as f64 * dt }
    } else if converged {
        Status::Completed
    } else {
        Status::Stalled
    };
    Ok(PicardResult {
        trajectory: Trajectory {
            params: config.params,
            t0,
            t_end: config.t_end,
            nonlinear: config.nonlinear,
            times,
            states,
            initial_measure: Some(mu.clone()),
            status,
            series,
            max_clamp: 0.0,
            steps: iterations,
        },
        iterations,
        converged,
        last_increment: increment,
    })
}

/// Max over the stored states of `|u − (Γ(t)∗μ + Duhamel term)|` relative
/// to max u. The Duhamel term is integrated over the stored states, which
/// must be equally spaced.
pub fn integral_residual(traj: &Trajectory) -> Result<f64> {
    if traj.status != Status::Completed {
        return Err(invalid("trajectory did not complete"));
    }
    let times = &traj.times;
    let k = times.len();
    if k < 2 {
        return Err(invalid("need at least two stored states"));
    }
    let dt = times[1] - times[0];
    if times.windows(2).any(|w| ((w[1] - w[0]) - dt).abs() > 1e-9 * dt) {
        return Err(invalid("stored states are not equally spaced"));
    }
    let grid = *traj.grid();
    let op = SpectralOperator::new(grid);
    let symbol = op.fraclap_symbol(traj.params.theta);
    let linear: Vec<Vec<f64>> = match &traj.initial_measure {
        Some(mu) => times
            .iter()
            .map(|&t| mollify_initial(mu, t, &grid, &traj.params).map(Field::into_values))
            .collect::<Result<_>>()?,
        None => times
            .iter()
            .map(|&t| {
                let f: Vec<f64> = symbol.iter().map(|s| (-(t - traj.t0) * s).exp()).collect();
                op.apply_factors(traj.states[0].values(), &f)
            })
            .collect(),
    };
    let duhamel = if traj.nonlinear {
        let p = traj.params.p_exponent;
        let g: Vec<Vec<f64>> = traj
            .states
            .iter()
            .map(|u| u.values().iter().map(|v| v.max(0.0).powf(p)).collect())
            .collect();
        duhamel_series(&op, &etd_weights(&symbol, dt), &g)
    } else {
        vec![vec![0.0; grid.len()]; k]
    };
    let scale = traj.states.iter().map(|s| s.max_abs()).fold(0.0f64, f64::max);
    if scale == 0.0 {
        return Ok(0.0);
    }
    let mut worst: f64 = 0.0;
    for j in 0..k {
        let u = traj.states[j].values();
        for i in 0..u.len() {
            worst = worst.max((u[i] - linear[j][i] - duhamel[j][i]).abs());
        }
    }
    Ok(worst / scale)
}

/// Relative defect of the very weak identity on `[t0, τ]` for a cutoff
/// test function vanishing by τ:
/// `∫∫ u(−∂_t + (−Δ)^{θ/2})φ = ∫∫ u^p φ + ∫ (Γ(t0)∗φ(t0)) dμ`.
pub fn weak_residual(traj: &Trajectory, phi: &CutoffPair, mu: &MeasureSpec) -> Result<f64> {
    let grid = *traj.grid();
    if *phi.spatial().grid() != grid {
        return Err(invalid("test function lives on a different grid"));
    }
    if phi.theta() != traj.params.theta {
        return Err(invalid("test function was built for a different theta"));
    }
    let psi = *phi.temporal();
    let end = psi.support_end();
    let last = *traj.times.last().unwrap();
    if end > last * (1.0 + 1e-12) || traj.status.blew_up() && end >= last {
        return Err(invalid(format!(
            "test function support ends at {end}, beyond the trajectory ({last})"
        )));
    }
    let p = traj.params.p_exponent;
    let vol = grid.cell_volume();
    let zeta = phi.spatial().values();
    let image = phi.image().values();
    let moments: Vec<(f64, f64, f64)> = traj
        .states
        .par_iter()
        .map(|u| {
            let u = u.values();
            let mut a = 0.0;
            let mut b = 0.0;
            let mut c = 0.0;
            for i in 0..u.len() {
                a += u[i] * zeta[i];
                b += u[i] * image[i];
                if traj.nonlinear {
                    c += u[i].max(0.0).powf(p) * zeta[i];
                }
            }
            (a * vol, b * vol, c * vol)
        })
        .collect();
    let gl = GaussLegendre::new(8);
    let mut lhs = 0.0;
    let mut rhs = 0.0;
    for k in 0..traj.times.len() - 1 {
        let (ta, tb) = (traj.times[k], traj.times[k + 1]);
        if ta >= end {
            break;
        }
        let (ma, mb) = (moments[k], moments[k + 1]);
        for (t, w) in gl.mapped(ta, tb.min(end)) {
            let s = (t - ta) / (tb - ta);
            let lerp = |x: f64, y: f64| (1.0 - s) * x + s * y;
            let (a, b, c) = (lerp(ma.0, mb.0), lerp(ma.1, mb.1), lerp(ma.2, mb.2));
            lhs += w * (-psi.derivative(t) * a + psi.eval(t) * b);
            rhs += w * psi.eval(t) * c;
        }
    }
    // ∫ u(t0) φ(t0) dx through the measure
    let op = SpectralOperator::new(grid);
    let phi0 = phi.spatial().scale(psi.eval(traj.t0));
    let smoothed = op.propagate(&phi0, traj.params.theta, traj.t0);
    let mut init: f64 = mu.atoms.iter().map(|a| a.mass * smoothed.interpolate(&a.center)).sum();
    for d in &mu.densities {
        init += d.level * region_integral(&d.region, &|x: &[f64]| smoothed.interpolate(x));
    }
    rhs += init;
    let denom = lhs.abs().max(rhs.abs()).max(f64::MIN_POSITIVE);
    Ok((lhs - rhs).abs() / denom)
}

/// Cutoffs at radii {1/2, 1, 2}·σ₀ (σ₀ = L/8) around three centres, with
/// temporal support ending at 3T/4.
pub fn test_bank(config: &SolverConfig) -> Result<Vec<CutoffPair>> {
    let grid = config.grid;
    let s0 = grid.extent() / 8.0;
    let n = grid.dim();
    let centres: Vec<Vec<f64>> = [0.0, s0, -0.5 * s0]
        .iter()
        .map(|&c| vec![c; n])
        .collect();
    let mut bank = Vec::new();
    for f in [0.5, 1.0, 2.0] {
        for c in &centres {
            bank.push(CutoffPair::new(f * s0, config.params.theta, &grid, c, config.t_end)?);
        }
    }
    Ok(bank)
}

/// Outcome of one sweep run.
#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub lambda: f64,
    pub status: Status,
    pub final_sup: f64,
    pub steps: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepResult {
    pub lambda_star: f64,
    pub lower: RunSummary,
    pub upper: RunSummary,
    pub runs: Vec<RunSummary>,
}

pub const SWEEP_BISECTIONS: usize = 12;

fn sweep_run(config: &SolverConfig, shape: &MeasureSpec, lambda: f64) -> Result<RunSummary> {
    let traj = integrate(config, &shape.scaled(lambda))?;
    Ok(RunSummary {
        lambda,
        status: traj.status,
        final_sup: traj.series.last().map_or(0.0, |s| s.sup),
        steps: traj.steps,
    })
}

/// Bisection on λ between a run that completes and one that blows up
/// before T, for the data λ·shape.
pub fn threshold_sweep(shape: &MeasureSpec, lambda_range: (f64, f64), config: &SolverConfig) -> Result<SweepResult> {
    let (lo, hi) = lambda_range;
    if !(lo >= 0.0 && hi > lo) {
        return Err(invalid("lambda range must satisfy 0 ≤ min < max"));
    }
    let mut cfg = config.clone();
    cfg.snapshots = 2;
    let mut lower = sweep_run(&cfg, shape, lo)?;
    let mut upper = sweep_run(&cfg, shape, hi)?;
    let mut runs = vec![lower.clone(), upper.clone()];
    if lower.status != Status::Completed || !upper.status.blew_up() {
        return Err(Error::NoBracket(format!(
            "λ = {lo} gives {:?} and λ = {hi} gives {:?}",
            lower.status, upper.status
        )));
    }
    for _ in 0..SWEEP_BISECTIONS {
        let mid = 0.5 * (lower.lambda + upper.lambda);
        let r = sweep_run(&cfg, shape, mid)?;
        runs.push(r.clone());
        match r.status {
            Status::BlewUp { .. } => upper = r,
            Status::Completed => lower = r,
            Status::Stalled => {
                return Err(Error::NonConvergence(format!("run at λ = {mid} stalled")));
            }
        }
    }
    check_sweep_monotone(&runs)?;
    Ok(SweepResult {
        lambda_star: 0.5 * (lower.lambda + upper.lambda),
        lower,
        upper,
        runs,
    })
}

/// Once some λ blows up, every larger λ must blow up.
pub fn check_sweep_monotone(runs: &[RunSummary]) -> Result<()> {
    let mut sorted: Vec<&RunSummary> = runs.iter().collect();
    sorted.sort_by(|a, b| a.lambda.total_cmp(&b.lambda));
    if let Some(first) = sorted.iter().position(|r| r.status.blew_up()) {
        if let Some(bad) = sorted[first..].iter().find(|r| !r.status.blew_up()) {
            return Err(Error::NonMonotone(format!(
                "λ = {} blows up but λ = {} does not",
                sorted[first].lambda, bad.lambda
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(theta: f64, p: f64, extent: f64, ppa: usize, t_end: f64) -> SolverConfig {
        SolverConfig::new(
            FracParams::new(theta, 1, p).unwrap(),
            Grid::new(1, extent, ppa).unwrap(),
            t_end,
        )
    }

    #[test]
    fn gaussian_initial_data() {
        let c = cfg(2.0, 2.0, 8.0, 1024, 1.0);
        let m = 1.7;
        let t0 = 0.01;
        let u = mollify_initial(&MeasureSpec::single_atom(vec![0.0], m), t0, &c.grid, &c.params).unwrap();
        for i in (0..1024).step_by(7) {
            let x = c.grid.point(i)[0];
            let exact = m * (4.0 * PI * t0).powf(-0.5) * (-x * x / (4.0 * t0)).exp();
            assert!((u.values()[i] - exact).abs() < 1e-12, "{x}");
        }
        assert!((u.integral() - m).abs() < 1e-4 * m);
        let z = mollify_initial(&MeasureSpec::default(), t0, &c.grid, &c.params).unwrap();
        assert_eq!(z.max_abs(), 0.0);
    }

    #[test]
    fn periodised_cauchy_mass() {
        let c = cfg(1.0, 2.0, 4.0, 4096, 1.0);
        let mu = MeasureSpec::single_atom(vec![0.3], 0.8);
        let u = mollify_initial(&mu, 0.01, &c.grid, &c.params).unwrap();
        assert!((u.integral() - 0.8).abs() < 1e-4 * 0.8, "{}", u.integral());
        // image sum of the Cauchy kernel in closed form
        let (l, t) = (4.0, 0.01);
        for i in [1000, 2048, 2100, 3500] {
            let x = c.grid.point(i)[0] - 0.3;
            let closed = 0.8 / (2.0 * l) * (PI * t / l).sinh() / ((PI * t / l).cosh() - (PI * x / l).cos());
            assert!((u.values()[i] - closed).abs() < 1e-6 * closed, "{x}");
        }
    }

    #[test]
    fn density_mass_is_preserved() {
        let c = cfg(1.5, 2.0, 4.0, 1024, 1.0);
        let mu = MeasureSpec {
            atoms: vec![],
            densities: vec![crate::capacity::Density {
                region: crate::capacity::Region::Box { lo: vec![-0.5], hi: vec![0.7] },
                level: 2.0,
            }],
        };
        let u = mollify_initial(&mu, 0.01, &c.grid, &c.params).unwrap();
        assert!((u.integral() - 2.4).abs() < 1e-4 * 2.4);
        assert!(u.min() >= 0.0);
    }

    #[test]
    fn linear_mode_is_exact() {
        let mut c = cfg(2.0, 2.0, 8.0, 1024, 1.0);
        c.nonlinear = false;
        c.snapshots = 8;
        let mu = MeasureSpec::single_atom(vec![0.0], 1.0);
        let tr = integrate(&c, &mu).unwrap();
        assert_eq!(tr.status, Status::Completed);
        for (t, s) in tr.times.iter().zip(&tr.states) {
            let exact = mollify_initial(&mu, *t, &c.grid, &c.params).unwrap();
            let d = s.zip_map(&exact, |a, b| a - b).max_abs();
            assert!(d < 1e-6 * exact.max_abs(), "{t}: {d}");
        }
        assert!(integral_residual(&tr).unwrap() < 1e-6);
    }

    #[test]
    fn constant_data_blows_up_at_ode_time() {
        let mut c = cfg(1.0, 2.0, 4.0, 64, 1.0);
        c.monitor_domain = false;
        let tr = integrate_from(&c, Field::constant(c.grid, 2.0)).unwrap();
        let t = tr.status.t_blow().expect("blow-up");
        assert!((t - 0.5).abs() < 0.05 * 0.5, "{t}");
        let pr = {
            let mut c2 = c.clone();
            c2.picard_steps = 400;
            c2.blowup_threshold = 1e4;
            // constant data through a uniform density covering the box
            let mu = MeasureSpec {
                atoms: vec![],
                densities: vec![crate::capacity::Density {
                    region: crate::capacity::Region::Box { lo: vec![-8.0], hi: vec![8.0] },
                    level: 2.0,
                }],
            };
            picard_duhamel(&c2, &mu, 200).unwrap()
        };
        let tp = pr.trajectory.status.t_blow().expect("divergence");
        assert!((tp - t).abs() < 0.1 * t, "{tp} vs {t}");
    }

    #[test]
    fn picard_zero_and_monotone() {
        let c = cfg(2.0, 2.0, 8.0, 512, 1.0);
        let z = picard_duhamel(&c, &MeasureSpec::default(), 5).unwrap();
        assert!(z.converged && z.iterations == 1);
        assert!(z.trajectory.states.iter().all(|s| s.max_abs() == 0.0));
    }

    #[test]
    fn two_schemes_agree_on_small_data() {
        let mut c = cfg(2.0, 2.0, 8.0, 512, 1.0);
        c.snapshots = 512;
        c.picard_steps = 512;
        let mu = MeasureSpec::single_atom(vec![0.0], 0.5);
        let a = integrate(&c, &mu).unwrap();
        let b = picard_duhamel(&c, &mu, 40).unwrap();
        assert!(b.converged);
        let scale = a.states.iter().map(|s| s.max_abs()).fold(0.0, f64::max);
        let mut worst: f64 = 0.0;
        for (t, s) in a.times.iter().zip(&a.states) {
            let other = b.trajectory.state_at(*t).unwrap();
            worst = worst.max(s.zip_map(&other, |x, y| x - y).max_abs());
        }
        assert!(worst < 1e-3 * scale, "{}", worst / scale);
        let r = integral_residual(&a).unwrap();
        assert!(r < 1e-3, "{r}");
        let mut bad = a.clone();
        bad.states[80] = bad.states[80].scale(1.1);
        assert!(integral_residual(&bad).unwrap() > 1e-2);
        // mass is nondecreasing
        assert!(a.series.windows(2).all(|w| w[1].mass >= w[0].mass * (1.0 - 1e-12)));
        for phi in test_bank(&c).unwrap() {
            let w = weak_residual(&a, &phi, &mu).unwrap();
            assert!(w < 1e-2, "{w}");
        }
    }

    #[test]
    fn domain_monitor_trips() {
        let c = cfg(1.0, 2.0, 1.0, 256, 1.0);
        let r = integrate(&c, &MeasureSpec::single_atom(vec![0.0], 0.1));
        assert!(matches!(r, Err(Error::DomainTooSmall { .. })));
    }

    #[test]
    fn weak_residual_of_zero_is_zero() {
        let mut c = cfg(2.0, 2.0, 8.0, 256, 1.0);
        c.snapshots = 16;
        let tr = integrate(&c, &MeasureSpec::default()).unwrap();
        let phi = &test_bank(&c).unwrap()[0];
        assert_eq!(weak_residual(&tr, phi, &MeasureSpec::default()).unwrap(), 0.0);
    }

    #[test]
    fn sweep_monotonicity_and_bracketing() {
        let runs = vec![
            RunSummary { lambda: 1.0, status: Status::Completed, final_sup: 1.0, steps: 1 },
            RunSummary { lambda: 2.0, status: Status::BlewUp { t_blow: 0.5 }, final_sup: 1e9, steps: 1 },
            RunSummary { lambda: 3.0, status: Status::Completed, final_sup: 1.0, steps: 1 },
        ];
        assert!(matches!(check_sweep_monotone(&runs), Err(Error::NonMonotone(_))));
        let c = cfg(2.0, 2.0, 8.0, 256, 0.5);
        let shape = MeasureSpec::single_atom(vec![0.0], 1.0);
        let r = threshold_sweep(&shape, (0.0, 0.1), &c);
        assert!(matches!(r, Err(Error::NoBracket(_))));
    }

    #[test]
    fn config_roundtrip_and_validation() {
        let c = cfg(1.5, 2.0, 8.0, 256, 1.0);
        let text = serde_json::to_string(&c).unwrap();
        let back: SolverConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back.scheme, Scheme::IntegratingFactor);
        assert!(text.contains("integrating_factor"));
        let mut bad = c.clone();
        bad.dt_init = 0.5;
        assert!(bad.validate().is_err());
        bad = c.clone();
        bad.t0 = Some(0.5);
        assert!(bad.validate().is_err());
    }
}
