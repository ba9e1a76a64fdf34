use std::path::Path;

use fracheat_core::capacity::MeasureSpec;
use fracheat_core::she_solver::{Scheme, SolverConfig};
use fracheat_core::spectral_core::{FracParams, Grid};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Reads a TOML config; missing keys keep their defaults.
pub fn load<C: DeserializeOwned + Default>(path: Option<&Path>) -> Result<C, CliError> {
    let Some(path) = path else {
        return Ok(C::default());
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))
}

/// Reads a measure document (JSON).
pub fn load_measure(path: &Path) -> Result<MeasureSpec, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read measure {}: {e}", path.display())))?;
    MeasureSpec::from_json(&text).map_err(|e| CliError::Usage(format!("invalid measure {}: {e}", path.display())))
}

pub fn defaults_toml<C: Serialize + Default>() -> String {
    toml::to_string(&C::default()).expect("defaults serialise")
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelCheck {
    pub theta: f64,
    pub dim: usize,
    pub quadrature_resolution: usize,
    pub box_extent: f64,
    pub scaling_samples: usize,
    pub decay_radius_min: f64,
    pub decay_radius_max: f64,
    pub monotone_pairs: usize,
    pub mass_times: Vec<f64>,
    pub export_table: bool,
}

impl Default for KernelCheck {
    fn default() -> Self {
        Self {
            theta: 1.5,
            dim: 1,
            quadrature_resolution: 256,
            box_extent: 40.0,
            scaling_samples: 50,
            decay_radius_min: 50.0,
            decay_radius_max: 1000.0,
            monotone_pairs: 50,
            mass_times: vec![0.5, 1.0, 2.0],
            export_table: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OperatorCheck {
    pub theta: f64,
    pub dim: usize,
    pub p: f64,
    pub extent: f64,
    /// Defaults to 2048 in 1D and 256 in 2D.
    pub points_per_axis: Option<usize>,
    pub pairs: usize,
    pub jensen_fields: usize,
    pub mollifier_epsilon: f64,
    pub exterior_points: usize,
    pub pv_cutoff: f64,
}

impl Default for OperatorCheck {
    fn default() -> Self {
        Self {
            theta: 1.5,
            dim: 1,
            p: 2.0,
            extent: 8.0,
            points_per_axis: None,
            pairs: 20,
            jensen_fields: 20,
            mollifier_epsilon: 1.0,
            exterior_points: 50,
            pv_cutoff: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DirichletCheck {
    pub theta: f64,
    pub dim: usize,
    pub points_per_axis: usize,
    pub eigenvalues_reported: usize,
    pub samples: usize,
    pub constants: Vec<f64>,
    pub times: Vec<f64>,
}

impl Default for DirichletCheck {
    fn default() -> Self {
        Self {
            theta: 1.0,
            dim: 1,
            points_per_axis: 64,
            eigenvalues_reported: 8,
            samples: 200,
            constants: vec![0.5, 1.0, 2.0],
            times: vec![0.01, 0.1, 0.5, 1.0],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TestfnBuild {
    pub theta: f64,
    pub dim: usize,
    /// Defaults to 128 in 1D and 64 in 2D.
    pub points_per_axis: Option<usize>,
    /// δ^θ = 2^{−delta_exp}.
    pub delta_exp: f64,
    pub smoothing_width: Option<f64>,
    pub time_steps: usize,
    pub taus: Vec<f64>,
    /// Exponents K for the δ sweep of the critical functional; empty skips it.
    pub slope_sweep: Vec<f64>,
    pub write_frames: bool,
}

impl Default for TestfnBuild {
    fn default() -> Self {
        Self {
            theta: 2.0,
            dim: 1,
            points_per_axis: None,
            delta_exp: 8.0,
            smoothing_width: None,
            time_steps: 256,
            taus: vec![0.6, 0.8, 1.0],
            slope_sweep: Vec::new(),
            write_frames: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CutoffFit {
    pub enabled: bool,
    /// Defaults to 16 in 1D and 8 in 2D.
    pub extent: Option<f64>,
    /// Defaults to 4096 in 1D and 512 in 2D.
    pub points_per_axis: Option<usize>,
    pub sigmas: Vec<f64>,
}

impl Default for CutoffFit {
    fn default() -> Self {
        Self {
            enabled: true,
            extent: None,
            points_per_axis: None,
            sigmas: vec![0.25, 0.5, 1.0, 2.0],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CapacityCheck {
    pub t_end: f64,
    pub p: f64,
    pub theta: f64,
    pub gamma: f64,
    /// Explicit σ values; when empty a geometric grid over
    /// [sigma_min_fraction, sigma_max_fraction]·T^{1/θ} is used.
    pub sigmas: Vec<f64>,
    pub sigma_points: usize,
    pub sigma_min_fraction: f64,
    pub sigma_max_fraction: f64,
    pub measure: MeasureSpec,
    pub cutoff_fit: CutoffFit,
}

impl Default for CapacityCheck {
    fn default() -> Self {
        Self {
            t_end: 1.0,
            p: 2.0,
            theta: 2.0,
            gamma: 1.0,
            sigmas: Vec::new(),
            sigma_points: 16,
            sigma_min_fraction: 0.05,
            sigma_max_fraction: 0.99,
            measure: MeasureSpec::single_atom(vec![0.0], 1.0),
            cutoff_fit: CutoffFit::default(),
        }
    }
}

impl OperatorCheck {
    pub fn points(&self) -> usize {
        self.points_per_axis.unwrap_or(if self.dim == 1 { 2048 } else { 256 })
    }
}

impl TestfnBuild {
    pub fn points(&self) -> usize {
        self.points_per_axis.unwrap_or(if self.dim == 1 { 128 } else { 64 })
    }
}

impl CapacityCheck {
    pub fn sigma_grid(&self) -> Vec<f64> {
        if !self.sigmas.is_empty() {
            return self.sigmas.clone();
        }
        sigma_grid(self.t_end, self.theta, self.sigma_points, self.sigma_min_fraction, self.sigma_max_fraction)
    }
}

pub fn sigma_grid(t_end: f64, theta: f64, points: usize, lo: f64, hi: f64) -> Vec<f64> {
    let reach = t_end.powf(1.0 / theta);
    let n = points.max(2);
    (0..n).map(|k| reach * lo * (hi / lo).powf(k as f64 / (n - 1) as f64)).collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Solver {
    pub theta: f64,
    pub dim: usize,
    pub p: f64,
    pub extent: f64,
    /// Defaults to 512 for she-run and 4096 for she-sweep.
    pub points_per_axis: Option<usize>,
    pub t_end: f64,
    /// Defaults to t_end/64.
    pub dt_init: Option<f64>,
    /// Defaults to 1e8 for she-run and 1e3·T^{−1/(p−1)} for she-sweep.
    pub blowup_threshold: Option<f64>,
    pub scheme: Scheme,
    /// Defaults to t_end/100.
    pub t0: Option<f64>,
    pub nonlinear: bool,
    /// Defaults to 512 for she-run (residuals need dense snapshots) and 64
    /// for she-sweep.
    pub snapshots: Option<usize>,
    pub picard_steps: usize,
    pub picard_max_iter: usize,
    pub monitor_domain: bool,
    pub support_level: f64,
    pub max_steps: usize,
}

impl Default for Solver {
    fn default() -> Self {
        Self {
            theta: 2.0,
            dim: 1,
            p: 2.0,
            extent: 8.0,
            points_per_axis: None,
            t_end: 1.0,
            dt_init: None,
            blowup_threshold: None,
            scheme: Scheme::IntegratingFactor,
            t0: None,
            nonlinear: true,
            snapshots: None,
            picard_steps: 256,
            picard_max_iter: 60,
            monitor_domain: true,
            support_level: 1e-3,
            max_steps: 1_000_000,
        }
    }
}

impl Solver {
    fn build(&self, points: usize, threshold: f64, snapshots: usize) -> Result<SolverConfig, CliError> {
        let params = FracParams::new(self.theta, self.dim, self.p)?;
        let grid = Grid::new(self.dim, self.extent, self.points_per_axis.unwrap_or(points))?;
        let mut c = SolverConfig::new(params, grid, self.t_end);
        if let Some(dt) = self.dt_init {
            c.dt_init = dt;
        }
        c.blowup_threshold = self.blowup_threshold.unwrap_or(threshold);
        c.scheme = self.scheme;
        c.t0 = self.t0;
        c.nonlinear = self.nonlinear;
        c.snapshots = self.snapshots.unwrap_or(snapshots);
        c.picard_steps = self.picard_steps;
        c.picard_max_iter = self.picard_max_iter;
        c.monitor_domain = self.monitor_domain;
        c.support_level = self.support_level;
        c.max_steps = self.max_steps;
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SheRun {
    pub solver: Solver,
    pub measure: MeasureSpec,
    /// Integral and weak residuals on the stored snapshots.
    pub residuals: bool,
    pub dump_states: bool,
}

impl SheRun {
    pub fn solver_config(&self) -> Result<SolverConfig, CliError> {
        self.solver.build(512, 1e8, 512)
    }
}

impl Default for SheRun {
    fn default() -> Self {
        Self {
            solver: Solver::default(),
            measure: MeasureSpec::single_atom(vec![0.0], 0.5),
            residuals: true,
            dump_states: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SheSweep {
    pub solver: Solver,
    pub shape: MeasureSpec,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub sigma_points: usize,
}

impl Default for SheSweep {
    fn default() -> Self {
        Self {
            solver: Solver::default(),
            shape: MeasureSpec::single_atom(vec![0.0], 1.0),
            lambda_min: 0.0,
            lambda_max: 20.0,
            sigma_points: 16,
        }
    }
}

impl SheSweep {
    pub fn solver_config(&self) -> Result<SolverConfig, CliError> {
        let s = &self.solver;
        self.solver.build(4096, 1e3 * s.t_end.powf(-1.0 / (s.p - 1.0)), 64)
    }
}
