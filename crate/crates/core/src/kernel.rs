//! The fractional heat kernel Γ_θ(x, t): the probability density whose
//! Fourier transform is `exp(−t|ξ|^θ)`.
//!
//! θ = 2 and θ = 1 use the Gaussian and Cauchy–Poisson closed forms. Other θ
//! go through a radial table of Γ_θ(·, 1) on `[0, 40]` (clamped cubic spline),
//! the large-|x| series of the stable density beyond, and the self-similar
//! scaling in t.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

use serde::Serialize;
use statrs::function::gamma::gamma;

use crate::error::{invalid, Result};
use crate::quad::{self, GaussLegendre, Tolerance};
use crate::spectral_core::{pv_constant, unit_sphere_area, FracParams};
use crate::tolerances::MONOTONE_SLACK;

pub const TABLE_RADIUS: f64 = 40.0;
pub const TABLE_NODES: usize = 4096;
pub const MIN_QUADRATURE_RESOLUTION: usize = 256;

// frequencies are cut where t|ξ|^θ = 42, i.e. a relative truncation of e^{-42}
const CUTOFF_EXPONENT: f64 = 42.0;
const GRADING_LEVELS: usize = 48;
const TAIL_TERMS: usize = 8;

fn gl16() -> &'static GaussLegendre {
    static GL: OnceLock<GaussLegendre> = OnceLock::new();
    GL.get_or_init(|| GaussLegendre::new(16))
}

fn gaussian(n: usize, r: f64, t: f64) -> f64 {
    (4.0 * PI * t).powf(-0.5 * n as f64) * (-r * r / (4.0 * t)).exp()
}

fn cauchy(n: usize, r: f64, t: f64) -> f64 {
    let c = if n == 1 { 1.0 / PI } else { 0.5 / PI };
    c * t / (t * t + r * r).powf(0.5 * (n as f64 + 1.0))
}

/// Quadrature nodes for the radial inversion integral at time `t`, adapted to
/// evaluation radius `r`. Weights carry `exp(−tξ^θ)`, the radial Jacobian and
/// the normalisation, so that Γ(r,t) = Σ w·K(ξr) with K = cos (1D) or J0 (2D).
fn fourier_nodes(n: usize, theta: f64, t: f64, r: f64, res: usize) -> Vec<(f64, f64)> {
    let xi_max = (CUTOFF_EXPONENT / t).powf(1.0 / theta);
    let mut width = xi_max / res as f64;
    if r > 0.0 {
        width = width.min(PI / r);
    }
    let panels = (xi_max / width).ceil() as usize;
    let width = xi_max / panels as f64;
    let gl = gl16();
    let mut out = Vec::with_capacity((panels + GRADING_LEVELS + 1) * gl.nodes.len());
    let mut push = |a: f64, b: f64| {
        for (xi, w) in gl.mapped(a, b) {
            let jac = if n == 1 { 1.0 / PI } else { xi / (2.0 * PI) };
            out.push((xi, w * jac * (-t * xi.powf(theta)).exp()));
        }
    };
    // ξ^θ is not smooth at the origin; grade the first panel geometrically
    let mut hi = width;
    for _ in 0..GRADING_LEVELS {
        push(0.5 * hi, hi);
        hi *= 0.5;
    }
    push(0.0, hi);
    for k in 1..panels {
        push(k as f64 * width, (k + 1) as f64 * width);
    }
    out
}

fn inversion_sum(n: usize, r: f64, nodes: &[(f64, f64)]) -> f64 {
    if n == 1 {
        nodes.iter().map(|&(xi, w)| w * (xi * r).cos()).sum()
    } else {
        nodes.iter().map(|&(xi, w)| w * libm::j0(xi * r)).sum()
    }
}

#[derive(Debug)]
struct RadialTable {
    n_dim: usize,
    theta: f64,
    step: f64,
    values: Vec<f64>,
    second: Vec<f64>,
    tail: Vec<f64>,
}

impl RadialTable {
    fn build(n: usize, theta: f64, res: usize) -> Result<Self> {
        let step = TABLE_RADIUS / (TABLE_NODES - 1) as f64;
        let nodes = fourier_nodes(n, theta, 1.0, TABLE_RADIUS, res);
        let values: Vec<f64> = (0..TABLE_NODES)
            .map(|i| inversion_sum(n, i as f64 * step, &nodes))
            .collect();
        let nf = n as f64;
        let tail = tail_coefficients(n, theta);
        let end = TABLE_RADIUS;
        let end_slope: f64 = tail
            .iter()
            .enumerate()
            .map(|(k, c)| {
                let e = nf + (k + 1) as f64 * theta;
                -e * c * end.powf(-e - 1.0)
            })
            .sum();
        let second = clamped_spline(&values, step, 0.0, end_slope);
        Ok(Self {
            n_dim: n,
            theta,
            step,
            values,
            second,
            tail,
        })
    }

    fn cached(n: usize, theta: f64, res: usize) -> Result<Arc<Self>> {
        type Key = (usize, u64, usize);
        static CACHE: OnceLock<Mutex<HashMap<Key, Arc<RadialTable>>>> = OnceLock::new();
        let key = (n, theta.to_bits(), res);
        let cache = CACHE.get_or_init(Default::default);
        if let Some(t) = cache.lock().expect("kernel table cache poisoned").get(&key) {
            return Ok(t.clone());
        }
        // built outside the lock; a concurrent duplicate build is harmless
        let table = Arc::new(Self::build(n, theta, res)?);
        cache
            .lock()
            .expect("kernel table cache poisoned")
            .entry(key)
            .or_insert_with(|| table.clone());
        Ok(table)
    }

    fn tail_law(&self, s: f64) -> f64 {
        let nf = self.n_dim as f64;
        self.tail
            .iter()
            .enumerate()
            .map(|(k, c)| c * s.powf(-nf - (k + 1) as f64 * self.theta))
            .sum()
    }

    /// ∫_{|x|>l} of the tail law.
    fn tail_mass(&self, l: f64) -> f64 {
        let area = unit_sphere_area(self.n_dim);
        self.tail
            .iter()
            .enumerate()
            .map(|(k, c)| {
                let e = (k + 1) as f64 * self.theta;
                area * c * l.powf(-e) / e
            })
            .sum()
    }

    fn eval(&self, s: f64) -> f64 {
        if s >= TABLE_RADIUS {
            return self.tail_law(s);
        }
        let x = s / self.step;
        let i = (x.floor() as usize).min(TABLE_NODES - 2);
        let u = x - i as f64;
        let v = 1.0 - u;
        v * self.values[i]
            + u * self.values[i + 1]
            + self.step * self.step / 6.0
                * ((v * v * v - v) * self.second[i] + (u * u * u - u) * self.second[i + 1])
    }
}

/// Coefficients c_k of Γ_θ(r,1) ~ Σ_k c_k r^{−N−kθ}, r → ∞:
/// c_k = (−1)^{k+1}/k! · Γ(kθ/2+1) Γ((kθ+N)/2) sin(πkθ/2) 2^{kθ} / π^{N/2+1}.
fn tail_coefficients(n: usize, theta: f64) -> Vec<f64> {
    let nf = n as f64;
    let mut fact = 1.0;
    (1..=TAIL_TERMS)
        .map(|k| {
            let kf = k as f64;
            fact *= kf;
            let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
            sign / fact
                * gamma(0.5 * kf * theta + 1.0)
                * gamma(0.5 * (kf * theta + nf))
                * (0.5 * PI * kf * theta).sin()
                * 2f64.powf(kf * theta)
                / PI.powf(0.5 * nf + 1.0)
        })
        .collect()
}

/// Second derivatives of the clamped cubic spline through equally spaced data.
fn clamped_spline(y: &[f64], h: f64, d0: f64, dn: f64) -> Vec<f64> {
    let n = y.len();
    let mut diag = vec![4.0; n];
    let mut rhs = vec![0.0; n];
    diag[0] = 2.0;
    diag[n - 1] = 2.0;
    rhs[0] = 6.0 / h * ((y[1] - y[0]) / h - d0);
    rhs[n - 1] = 6.0 / h * (dn - (y[n - 1] - y[n - 2]) / h);
    for i in 1..n - 1 {
        rhs[i] = 6.0 / (h * h) * (y[i + 1] - 2.0 * y[i] + y[i - 1]);
    }
    // Thomas algorithm, unit off-diagonals
    for i in 1..n {
        let m = 1.0 / diag[i - 1];
        diag[i] -= m;
        rhs[i] -= m * rhs[i - 1];
    }
    let mut out = vec![0.0; n];
    out[n - 1] = rhs[n - 1] / diag[n - 1];
    for i in (0..n - 1).rev() {
        out[i] = (rhs[i] - out[i + 1]) / diag[i];
    }
    out
}

#[derive(Debug, Clone)]
enum Profile {
    Gaussian,
    Cauchy,
    Table(Arc<RadialTable>),
}

/// Evaluator for Γ_θ on ℝ^N, N ∈ {1, 2}.
#[derive(Debug, Clone)]
pub struct KernelEvaluator {
    params: FracParams,
    quadrature_resolution: usize,
    box_extent: f64,
    profile: Profile,
}

/// Result of [`KernelEvaluator::check_decay`].
#[derive(Debug, Clone, Serialize)]
pub struct DecayFit {
    pub slope: f64,
    pub target: f64,
    pub relative_error: f64,
    /// Range of Γ(x,1)·(1+|x|)^{N+θ} over the fitted radii.
    pub ratio_min: f64,
    pub ratio_max: f64,
}

/// Result of [`KernelEvaluator::check_radial_monotone`].
#[derive(Debug, Clone, Serialize)]
pub struct MonotoneReport {
    pub holds: bool,
    /// Largest Γ(x,1) − Γ(y,1) over the pairs (|x| ≥ |y|); ≤ 0 when monotone.
    pub worst_violation: f64,
}

impl KernelEvaluator {
    /// `quadrature_resolution` bounds the frequency panel width by
    /// `ξ_max / quadrature_resolution`; `box_extent` is the truncation radius
    /// used by [`Self::kernel_mass`].
    pub fn new(params: FracParams, quadrature_resolution: usize, box_extent: f64) -> Result<Self> {
        if quadrature_resolution < MIN_QUADRATURE_RESOLUTION {
            return Err(invalid(format!(
                "quadrature resolution {quadrature_resolution} is below {MIN_QUADRATURE_RESOLUTION}"
            )));
        }
        if !(box_extent > 0.0) {
            return Err(invalid("box extent must be positive"));
        }
        let profile = if params.theta == 2.0 {
            Profile::Gaussian
        } else if params.theta == 1.0 {
            Profile::Cauchy
        } else {
            Profile::Table(RadialTable::cached(
                params.n_dim,
                params.theta,
                quadrature_resolution,
            )?)
        };
        Ok(Self {
            params,
            quadrature_resolution,
            box_extent,
            profile,
        })
    }

    /// Resolution 256 and a box of radius 40.
    pub fn with_defaults(params: FracParams) -> Result<Self> {
        Self::new(params, MIN_QUADRATURE_RESOLUTION, TABLE_RADIUS)
    }

    pub fn params(&self) -> &FracParams {
        &self.params
    }

    pub fn quadrature_resolution(&self) -> usize {
        self.quadrature_resolution
    }

    pub fn box_extent(&self) -> f64 {
        self.box_extent
    }

    /// Γ_θ(s, 1) as a function of the radius.
    pub fn profile(&self, s: f64) -> f64 {
        let n = self.params.n_dim;
        match &self.profile {
            Profile::Gaussian => gaussian(n, s, 1.0),
            Profile::Cauchy => cauchy(n, s, 1.0),
            Profile::Table(t) => t.eval(s),
        }
    }

    /// Γ_θ at radius `r` and time `t > 0`.
    pub fn eval_radial(&self, r: f64, t: f64) -> f64 {
        let n = self.params.n_dim;
        let v = match &self.profile {
            Profile::Gaussian => gaussian(n, r, t),
            Profile::Cauchy => cauchy(n, r, t),
            Profile::Table(tab) => {
                let theta = self.params.theta;
                t.powf(-(n as f64) / theta) * tab.eval(r * t.powf(-1.0 / theta))
            }
        };
        debug_assert!(v > -1e-15, "negative kernel value {v:e} at r = {r}, t = {t}");
        v
    }

    pub fn eval_gamma(&self, x: &[f64], t: f64) -> Result<f64> {
        Ok(self.eval_radial(self.radius_of(x)?, check_time(t)?))
    }

    /// Γ_θ(x, t) by direct quadrature of the radial inversion integral at
    /// time `t`, bypassing closed forms, the table and the scaling law.
    pub fn eval_direct(&self, x: &[f64], t: f64) -> Result<f64> {
        let r = self.radius_of(x)?;
        let t = check_time(t)?;
        Ok(self.direct_radial(r, t))
    }

    fn direct_radial(&self, r: f64, t: f64) -> f64 {
        let n = self.params.n_dim;
        let nodes = fourier_nodes(n, self.params.theta, t, r, self.quadrature_resolution);
        inversion_sum(n, r, &nodes)
    }

    fn radius_of(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.params.n_dim {
            return Err(invalid(format!(
                "point has {} coordinates, expected {}",
                x.len(),
                self.params.n_dim
            )));
        }
        Ok(x.iter().map(|v| v * v).sum::<f64>().sqrt())
    }

    /// Coefficient `a` of the large-|x| law Γ_θ(x,1) ≈ a|x|^{−N−θ} (θ < 2).
    pub fn tail_coefficient(&self) -> Result<f64> {
        pv_constant(self.params.n_dim, self.params.theta)
    }

    /// Max relative discrepancy between Γ(x,t) and t^{−N/θ}Γ(t^{−1/θ}x, 1).
    ///
    /// With a closed form both sides use it; otherwise the left side is the
    /// direct inversion at time t and the right side goes through the table.
    pub fn check_scaling(&self, samples: &[(Vec<f64>, f64)]) -> Result<f64> {
        let n = self.params.n_dim as f64;
        let theta = self.params.theta;
        let mut worst: f64 = 0.0;
        for (x, t) in samples {
            let r = self.radius_of(x)?;
            let t = check_time(*t)?;
            let lhs = match self.profile {
                Profile::Gaussian | Profile::Cauchy => self.eval_radial(r, t),
                Profile::Table(_) => self.direct_radial(r, t),
            };
            let rhs = t.powf(-n / theta) * self.profile(r * t.powf(-1.0 / theta));
            worst = worst.max((lhs - rhs).abs() / lhs.abs());
        }
        Ok(worst)
    }

    /// Least-squares slope of log Γ(x,1) against log(1+|x|) over `radii`.
    pub fn check_decay(&self, radii: &[f64]) -> Result<DecayFit> {
        let theta = self.params.theta;
        if theta >= 2.0 {
            return Err(invalid("the Gaussian kernel has no power-law tail"));
        }
        let lo = radii.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = radii.iter().copied().fold(0.0, f64::max);
        if radii.len() < 2 || lo < 5.0 || hi < 10.0 * lo {
            return Err(invalid(
                "decay radii must start at 5 or beyond and span at least a decade",
            ));
        }
        let target = -(self.params.n_dim as f64 + theta);
        let mut xs = Vec::with_capacity(radii.len());
        let mut ys = Vec::with_capacity(radii.len());
        let mut ratio_min = f64::INFINITY;
        let mut ratio_max: f64 = 0.0;
        for &r in radii {
            let v = match self.profile {
                Profile::Cauchy => self.eval_radial(r, 1.0),
                _ => self.direct_radial(r, 1.0),
            };
            if !(v > 0.0) {
                return Err(crate::error::Error::NonConvergence(format!(
                    "kernel value {v:e} at radius {r} is not positive"
                )));
            }
            let ratio = v * (1.0 + r).powf(-target);
            ratio_min = ratio_min.min(ratio);
            ratio_max = ratio_max.max(ratio);
            xs.push((1.0 + r).ln());
            ys.push(v.ln());
        }
        let slope = ls_slope(&xs, &ys);
        Ok(DecayFit {
            slope,
            target,
            relative_error: ((slope - target) / target).abs(),
            ratio_min,
            ratio_max,
        })
    }

    /// Checks Γ(x,1) ≤ Γ(y,1) + 1e−10 for pairs with |x| ≥ |y|.
    pub fn check_radial_monotone(&self, pairs: &[(Vec<f64>, Vec<f64>)]) -> Result<MonotoneReport> {
        let mut worst = f64::NEG_INFINITY;
        for (x, y) in pairs {
            let (rx, ry) = (self.radius_of(x)?, self.radius_of(y)?);
            if rx < ry {
                return Err(invalid(format!("pair has |x| = {rx} < |y| = {ry}")));
            }
            worst = worst.max(self.eval_radial(rx, 1.0) - self.eval_radial(ry, 1.0));
        }
        Ok(MonotoneReport {
            holds: worst <= MONOTONE_SLACK,
            worst_violation: if pairs.is_empty() { 0.0 } else { worst },
        })
    }

    /// ∫Γ(x,t)dx over the ball of radius `box_extent` plus the analytic mass
    /// outside it.
    pub fn kernel_mass(&self, t: f64) -> Result<f64> {
        let t = check_time(t)?;
        let n = self.params.n_dim;
        let nf = n as f64;
        let theta = self.params.theta;
        let area = unit_sphere_area(n);
        // in the self-similar variable s = t^{-1/θ}|x|
        let big_r = self.box_extent * t.powf(-1.0 / theta);
        let (upper, tail) = match &self.profile {
            Profile::Gaussian => (
                big_r,
                if n == 1 {
                    libm::erfc(0.5 * big_r)
                } else {
                    (-0.25 * big_r * big_r).exp()
                },
            ),
            Profile::Cauchy => (
                big_r,
                if n == 1 {
                    1.0 - 2.0 / PI * big_r.atan()
                } else {
                    1.0 / (1.0 + big_r * big_r).sqrt()
                },
            ),
            Profile::Table(tab) => {
                let l = big_r.max(TABLE_RADIUS);
                (l, tab.tail_mass(l))
            }
        };
        let mut breaks: Vec<f64> = (1..80).map(|k| 0.5 * k as f64).collect();
        if upper > TABLE_RADIUS {
            breaks.extend(quad::geometric_edges(TABLE_RADIUS, upper, 1.5));
        }
        let tol = Tolerance {
            abs: 1e-14,
            rel: 1e-13,
            max_segments: 20_000,
        };
        let inner = quad::integrate(
            |s| area * s.powf(nf - 1.0) * self.profile(s),
            0.0,
            upper,
            &breaks,
            tol,
        )?;
        Ok(inner + tail)
    }

    /// `(radius, Γ(radius, 1))` on the table nodes over `[0, 40]`.
    pub fn radial_table(&self) -> Vec<(f64, f64)> {
        let step = TABLE_RADIUS / (TABLE_NODES - 1) as f64;
        (0..TABLE_NODES)
            .map(|i| {
                let r = i as f64 * step;
                (r, self.profile(r))
            })
            .collect()
    }
}

fn check_time(t: f64) -> Result<f64> {
    if t > 0.0 && t.is_finite() {
        Ok(t)
    } else {
        Err(invalid(format!("time must be positive, got {t}")))
    }
}

/// Least-squares slope of `ys` against `xs`.
pub fn ls_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
    }
    sxy / sxx
}
