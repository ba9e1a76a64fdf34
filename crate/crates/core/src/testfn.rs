//! The adjoint test function φ_δ on the unit ball.
//!
//! φ_δ solves the backward problem −∂_t φ + (−Δ)^{θ/2} φ = c_δ f_δ(|x|^θ + t)
//! in B × (0, 1) with φ = 0 outside B and φ(·, 1) = 0. It is computed through
//! its time reversal ψ(x, t) = φ(x, 1 − t), a forward problem with zero
//! initial data, integrated mode by mode on the Dirichlet eigenbasis.

use std::f64::consts::PI;
use std::sync::Arc;

use faer::Mat;
use rayon::prelude::*;
use serde::Serialize;

use crate::dirichlet::{BallGrid, DirichletOperator};
use crate::error::{invalid, Error, Result};
use crate::quad::{self, Tolerance};
use crate::spectral_core::unit_sphere_area;
use crate::tolerances::REFINEMENT;

pub const MIN_TIME_STEPS: usize = 256;

// internal steps shrink like 5% of the distance 1 − s to the forcing
// singularity, down to δ^θ/64
const STEP_RATIO: f64 = 0.05;
const STEP_FLOOR_FRACTION: f64 = 1.0 / 64.0;

/// Quintic smoothstep on [0, 1].
fn smoothstep(u: f64) -> f64 {
    let u = u.clamp(0.0, 1.0);
    u * u * u * (10.0 + u * (-15.0 + 6.0 * u))
}

/// The forcing f_δ(τ): zero up to 2δ^θ + s, a smoothstep ramp onto 1/τ
/// finished by 4δ^θ − s, exactly 1/τ up to 1/4, then a smoothstep descent
/// of 1/τ to zero at 1/2.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ForcingProfile {
    delta: f64,
    theta: f64,
    smoothing_width: f64,
    zero: bool,
}

/// Builds f_δ with the given ramp width; `None` selects δ^θ/4.
pub fn build_forcing(delta: f64, theta: f64, smoothing_width: Option<f64>) -> Result<ForcingProfile> {
    if !(theta > 0.0 && theta <= 2.0) {
        return Err(invalid(format!("theta must lie in (0, 2], got {theta}")));
    }
    if !(delta > 0.0) {
        return Err(invalid("delta must be positive"));
    }
    let a = delta.powf(theta);
    if a >= 1.0 / 64.0 {
        return Err(invalid(format!(
            "δ too large for the construction: δ^θ = {a} is not below 1/64"
        )));
    }
    let s = smoothing_width.unwrap_or(0.25 * a);
    if !(s > 0.0) || s > 0.5 * a || s > 1.0 / 16.0 {
        return Err(invalid(format!(
            "smoothing width {s} must lie in (0, min(δ^θ/2, 1/16)]"
        )));
    }
    Ok(ForcingProfile {
        delta,
        theta,
        smoothing_width: s,
        zero: false,
    })
}

impl ForcingProfile {
    /// f ≡ 0 with the bookkeeping of an admissible δ.
    pub fn zero(delta: f64, theta: f64) -> Result<Self> {
        let mut f = build_forcing(delta, theta, None)?;
        f.zero = true;
        Ok(f)
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn smoothing_width(&self) -> f64 {
        self.smoothing_width
    }

    pub fn is_zero(&self) -> bool {
        self.zero
    }

    fn a(&self) -> f64 {
        self.delta.powf(self.theta)
    }

    /// Points where the piecewise definition switches.
    pub fn breakpoints(&self) -> [f64; 4] {
        let a = self.a();
        let s = self.smoothing_width;
        [2.0 * a + s, 4.0 * a - s, 0.25, 0.5]
    }

    pub fn eval(&self, tau: f64) -> f64 {
        if self.zero {
            return 0.0;
        }
        let [lo, hi, q, h] = self.breakpoints();
        if tau <= lo || tau >= h {
            0.0
        } else if tau < hi {
            smoothstep((tau - lo) / (hi - lo)) / tau
        } else if tau <= q {
            1.0 / tau
        } else {
            (1.0 - smoothstep((tau - q) / (h - q))) / tau
        }
    }

    /// c_δ for this profile's δ and θ.
    pub fn c_delta(&self) -> Result<f64> {
        c_delta(self.delta, self.theta)
    }
}

/// c_δ = 1/(−log(32δ^θ)).
pub fn c_delta(delta: f64, theta: f64) -> Result<f64> {
    let a = delta.powf(theta);
    if !(a > 0.0) || a >= 1.0 / 32.0 {
        return Err(invalid(format!(
            "δ^θ = {a} must lie in (0, 1/32) for a positive logarithm"
        )));
    }
    Ok(-1.0 / (32.0 * a).ln())
}

/// φ_δ on the ball nodes over a uniform time grid on [0, 1], possibly
/// rescaled parabolically by `tau_scale`.
#[derive(Debug, Clone)]
pub struct TestFunction {
    grid: Arc<BallGrid>,
    forcing: ForcingProfile,
    c_delta: f64,
    // frames[k][node] at unscaled time k / time_steps
    frames: Arc<Vec<Vec<f64>>>,
    tau_scale: f64,
}

/// Result of [`check_initial_lower_bound`].
#[derive(Debug, Clone, Serialize)]
pub struct LowerBound {
    pub c_min: f64,
    /// `(|x|, φ_δ(x, 0))` for the nodes in B(0, δ).
    pub profile: Vec<(f64, f64)>,
}

impl TestFunction {
    pub fn grid(&self) -> &BallGrid {
        &self.grid
    }

    pub fn forcing(&self) -> &ForcingProfile {
        &self.forcing
    }

    pub fn delta(&self) -> f64 {
        self.forcing.delta
    }

    pub fn theta(&self) -> f64 {
        self.forcing.theta
    }

    pub fn c_delta(&self) -> f64 {
        self.c_delta
    }

    pub fn tau_scale(&self) -> f64 {
        self.tau_scale
    }

    pub fn time_steps(&self) -> usize {
        self.frames.len() - 1
    }

    /// Unscaled frame φ_δ(·, k / time_steps).
    pub fn frame(&self, k: usize) -> &[f64] {
        &self.frames[k]
    }

    /// Spatial radius τ^{1/θ} of the (scaled) support ball.
    pub fn support_ball_radius(&self) -> f64 {
        self.tau_scale.powf(1.0 / self.theta())
    }

    /// Time horizon τ of the (scaled) support.
    pub fn horizon(&self) -> f64 {
        self.tau_scale
    }

    /// Largest |x| among nodes where φ is positive at some time, in scaled
    /// coordinates.
    pub fn support_radius(&self) -> f64 {
        let grid = &self.grid;
        let mut r: f64 = 0.0;
        for i in 0..grid.len() {
            if self.frames.iter().any(|f| f[i] > 0.0) {
                r = r.max(grid.radius(i));
            }
        }
        r * self.support_ball_radius()
    }

    /// φ_{δ,τ}(x, t) = φ_δ(x/τ^{1/θ}, t/τ): multilinear in space, linear in time.
    pub fn eval(&self, x: &[f64], t: f64) -> f64 {
        let tau = self.tau_scale;
        let s = t / tau;
        if !(0.0..=1.0).contains(&s) {
            return 0.0;
        }
        let scale = self.support_ball_radius();
        let xi: Vec<f64> = x.iter().map(|v| v / scale).collect();
        let m = self.time_steps();
        let pos = s * m as f64;
        let k = (pos.floor() as usize).min(m - 1);
        let w = pos - k as f64;
        let a = self.grid.interpolate(&self.frames[k], &xi);
        if w == 0.0 {
            return a;
        }
        (1.0 - w) * a + w * self.grid.interpolate(&self.frames[k + 1], &xi)
    }

    /// The exact value of (−∂_t + (−Δ)^{θ/2}) φ_{δ,τ} at (x, t):
    /// c_δ τ^{−1} f_δ((|x|^θ + t)/τ).
    pub fn source(&self, x: &[f64], t: f64) -> f64 {
        let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let tau = self.tau_scale;
        if r > self.support_ball_radius() || !(0.0..=tau).contains(&t) {
            return 0.0;
        }
        self.c_delta / tau * self.forcing.eval((r.powf(self.theta()) + t) / tau)
    }
}

fn phi_functions(z: f64) -> (f64, f64, f64) {
    let e = (-z).exp();
    if z < 1e-3 {
        let p1 = 1.0 - z / 2.0 + z * z / 6.0 - z * z * z / 24.0;
        let p2 = 0.5 - z / 6.0 + z * z / 24.0 - z * z * z / 120.0;
        (e, p1, p2)
    } else {
        (e, (1.0 - e) / z, (z - 1.0 + e) / (z * z))
    }
}

/// ψ at the output times k/M (without the c_δ factor), as [time][node].
fn duhamel(
    forcing: &ForcingProfile,
    op: &DirichletOperator,
    time_steps: usize,
    ratio: f64,
    floor: f64,
) -> Vec<Vec<f64>> {
    let grid = op.grid();
    let n = grid.len();
    let theta = op.theta();
    let dt = 1.0 / time_steps as f64;
    let mut s_grid = vec![0.0];
    let mut out_index = vec![0usize];
    for k in 0..time_steps {
        let t0 = k as f64 * dt;
        let t1 = if k + 1 == time_steps { 1.0 } else { (k + 1) as f64 * dt };
        let step = (ratio * (1.0 - t1)).max(floor);
        let m = ((t1 - t0) / step - 1e-9).ceil().max(1.0) as usize;
        for i in 1..=m {
            s_grid.push(if i == m { t1 } else { t0 + (t1 - t0) * i as f64 / m as f64 });
        }
        out_index.push(s_grid.len() - 1);
    }
    let rho: Vec<f64> = (0..n).map(|i| grid.radius(i).powf(theta)).collect();
    let g = Mat::from_fn(s_grid.len(), n, |j, i| forcing.eval(rho[i] + 1.0 - s_grid[j]));
    let v = op.eigenvectors();
    // modal forcing F[j, mode]
    let f_modal = &g * v;
    let lambdas = op.eigenvalues();
    let columns: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|mode| {
            let lam = lambdas[mode];
            let mut a = 0.0;
            let mut out = Vec::with_capacity(time_steps + 1);
            out.push(0.0);
            let mut next_out = 1;
            for j in 0..s_grid.len() - 1 {
                let h = s_grid[j + 1] - s_grid[j];
                let (e, p1, p2) = phi_functions(lam * h);
                a = e * a + h * ((p1 - p2) * f_modal[(j, mode)] + p2 * f_modal[(j + 1, mode)]);
                if next_out < out_index.len() && out_index[next_out] == j + 1 {
                    out.push(a);
                    next_out += 1;
                }
            }
            out
        })
        .collect();
    let a_out = Mat::from_fn(time_steps + 1, n, |k, mode| columns[mode][k]);
    let psi = &a_out * v.transpose();
    (0..=time_steps)
        .map(|k| (0..n).map(|i| psi[(k, i)]).collect())
        .collect()
}

/// Solves the adjoint problem for φ_δ with `time_steps` output intervals.
/// The Duhamel integral is recomputed with internal steps halved and the
/// two must agree to 1e−3 relative.
pub fn solve_ahe(forcing: &ForcingProfile, op: &DirichletOperator, time_steps: usize) -> Result<TestFunction> {
    if time_steps < MIN_TIME_STEPS {
        return Err(invalid(format!(
            "time_steps {time_steps} is below {MIN_TIME_STEPS}"
        )));
    }
    if op.theta() != forcing.theta {
        return Err(invalid("operator and forcing use different theta"));
    }
    let c = forcing.c_delta()?;
    let floor = STEP_FLOOR_FRACTION * forcing.a();
    let coarse = duhamel(forcing, op, time_steps, STEP_RATIO, floor);
    let fine = duhamel(forcing, op, time_steps, 0.5 * STEP_RATIO, 0.5 * floor);
    let peak = fine.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        let diff = coarse
            .iter()
            .flatten()
            .zip(fine.iter().flatten())
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        if diff > REFINEMENT * peak {
            return Err(Error::NonConvergence(format!(
                "time refinement changed the solution by {:.3e} relative",
                diff / peak
            )));
        }
    }
    // exact positivity holds for the M-matrix semigroup; clamp rounding
    let floor_neg = -1e-9 * peak.max(f64::MIN_POSITIVE);
    let mut frames: Vec<Vec<f64>> = Vec::with_capacity(time_steps + 1);
    for k in (0..=time_steps).rev() {
        let mut row = Vec::with_capacity(fine[k].len());
        for &v in &fine[k] {
            if v < floor_neg {
                return Err(Error::Negative(format!("φ_δ value {v:e} at frame {k}")));
            }
            row.push(c * v.max(0.0));
        }
        frames.push(row);
    }
    // φ(·, 1) = ψ(·, 0) = 0 exactly
    debug_assert!(frames[time_steps].iter().all(|&v| v == 0.0));
    Ok(TestFunction {
        grid: Arc::new(op.grid().clone()),
        forcing: *forcing,
        c_delta: c,
        frames: Arc::new(frames),
        tau_scale: 1.0,
    })
}

/// Minimum of φ_δ(·, 0) over the nodes in B(0, δ).
pub fn check_initial_lower_bound(tf: &TestFunction) -> Result<LowerBound> {
    let grid = tf.grid();
    let delta = tf.delta();
    let phi0 = tf.frame(0);
    let profile: Vec<(f64, f64)> = (0..grid.len())
        .filter(|&i| grid.radius(i) < delta)
        .map(|i| (grid.radius(i), phi0[i]))
        .collect();
    if profile.len() < 3 {
        return Err(Error::GridTooCoarse(format!(
            "only {} nodes inside B(0, {delta}); refine the ball grid",
            profile.len()
        )));
    }
    let c_min = profile.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    Ok(LowerBound { c_min, profile })
}

/// φ_{δ,τ}(x, t) = φ_δ(x/τ^{1/θ}, t/τ), composed with any earlier scaling.
pub fn rescale(tf: &TestFunction, tau: f64) -> Result<TestFunction> {
    if !(tau > 0.0) {
        return Err(invalid(format!("tau must be positive, got {tau}")));
    }
    let mut out = tf.clone();
    out.tau_scale *= tau;
    Ok(out)
}

/// ∫∫ |(−∂_t + (−Δ)^{θ/2}) φ_{δ,τ}|^{p/(p−1)} dx dt at the critical exponent,
/// using the exact source c_δ τ^{−1} f_δ((|x|^θ + t)/τ) on the support.
pub fn rhs_functional(tf: &TestFunction, p: f64) -> Result<f64> {
    let theta = tf.theta();
    let n = tf.grid().dim();
    let critical = 1.0 + theta / n as f64;
    if (p - critical).abs() > 1e-12 * critical {
        return Err(invalid(format!(
            "p = {p} is not the critical exponent {critical}"
        )));
    }
    if tf.forcing().is_zero() {
        return Ok(0.0);
    }
    let q = p / (p - 1.0);
    let tau = tf.tau_scale;
    let c = tf.c_delta;
    let f = tf.forcing;
    let bps = f.breakpoints();
    let r_max = tau.powf(1.0 / theta);
    let outer_breaks: Vec<f64> = bps.iter().map(|u| (tau * u).powf(1.0 / theta)).collect();
    let area = unit_sphere_area(n);
    let tol = Tolerance {
        abs: 1e-15,
        rel: 1e-11,
        max_segments: 4000,
    };
    let mut failure = None;
    let value = quad::integrate(
        |r| {
            let rt = r.powf(theta);
            let inner_breaks: Vec<f64> = bps.iter().map(|u| tau * u - rt).collect();
            let inner = quad::integrate(
                |t| (c / tau * f.eval((rt + t) / tau)).powf(q),
                0.0,
                tau,
                &inner_breaks,
                tol,
            );
            match inner {
                Ok(v) => area * r.powi(n as i32 - 1) * v,
                Err(e) => {
                    failure.get_or_insert(e);
                    0.0
                }
            }
        },
        0.0,
        r_max,
        &outer_breaks,
        tol,
    )?;
    match failure {
        Some(e) => Err(e),
        None => Ok(value),
    }
}

/// Volume of the unit ball in dimension N.
pub fn unit_ball_volume(n: usize) -> f64 {
    match n {
        1 => 2.0,
        2 => PI,
        _ => unit_sphere_area(n) / n as f64,
    }
}
