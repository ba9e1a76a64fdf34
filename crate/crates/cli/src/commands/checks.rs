use std::f64::consts::PI;

use fracheat_core::capacity::{kihon_rhs, necessary_check, CutoffPair, TestFn, Verdict};
use fracheat_core::dirichlet::{BallGrid, DirichletKernel, DirichletOperator};
use fracheat_core::kernel::{ls_slope, KernelEvaluator};
use fracheat_core::quad::geometric_edges;
use fracheat_core::spectral_core::io::write_field;
use fracheat_core::spectral_core::{
    apply_fraclap_pv, check_mollifier_antisymmetry, jensen_gap, mollify, selfadjoint_defect, Field, FracParams, Grid,
    Mollifier,
};
use fracheat_core::testfn::{build_forcing, c_delta, check_initial_lower_bound, rescale, rhs_functional, solve_ahe};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use super::rng;
use crate::config;
use crate::run::{num, Check, Report, RunContext};
use crate::CliError;

fn random_point(rng: &mut ChaCha8Rng, dim: usize, r: f64) -> Vec<f64> {
    (0..dim).map(|_| rng.gen_range(-r..r)).collect()
}

pub fn kernel_check(ctx: &mut RunContext, cfg: &config::KernelCheck) -> Result<Report, CliError> {
    let params = FracParams::new(cfg.theta, cfg.dim, 2.0)?;
    let k = KernelEvaluator::new(params, cfg.quadrature_resolution, cfg.box_extent)?;
    let mut rng = rng(ctx);
    let mut rep = Report::new("kernel-check");
    rep.param("theta", cfg.theta);
    rep.param("dim", cfg.dim);

    let samples: Vec<(Vec<f64>, f64)> = (0..cfg.scaling_samples)
        .map(|_| (random_point(&mut rng, cfg.dim, 3.0), rng.gen_range(0.1..4.0)))
        .collect();
    let closed = cfg.theta == 2.0 || cfg.theta == 1.0;
    rep.check("scaling_max_rel_error", Check::below(k.check_scaling(&samples)?, if closed { 1e-10 } else { 1e-6 }));

    if cfg.theta < 2.0 {
        let fit = k.check_decay(&geometric_edges(cfg.decay_radius_min, cfg.decay_radius_max, 1.35))?;
        rep.check("decay_slope", Check::relative(fit.slope, fit.target, 0.05));
        rep.check("decay_ratio_min", Check::info(fit.ratio_min));
        rep.check("decay_ratio_max", Check::info(fit.ratio_max));
    }

    let pairs: Vec<(Vec<f64>, Vec<f64>)> = (0..cfg.monotone_pairs)
        .map(|_| {
            let a = random_point(&mut rng, cfg.dim, 6.0);
            let b = random_point(&mut rng, cfg.dim, 6.0);
            let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>();
            if norm(&a) >= norm(&b) {
                (a, b)
            } else {
                (b, a)
            }
        })
        .collect();
    let mono = k.check_radial_monotone(&pairs)?;
    rep.check("radial_monotone", Check::flag(mono.holds));
    rep.check("radial_monotone_worst", Check::info(mono.worst_violation));

    for &t in &cfg.mass_times {
        rep.check(&format!("mass_t{t}"), Check::relative(k.kernel_mass(t)?, 1.0, 1e-6));
    }
    if cfg.export_table {
        let rows: Vec<Vec<String>> = k.radial_table().into_iter().map(|(r, v)| vec![num(r), num(v)]).collect();
        ctx.write_csv("radial_table.csv", &["radius", "density"], &rows)?;
    }
    Ok(rep)
}

// sum of random Gaussian bumps inside half the box
fn random_smooth(grid: Grid, rng: &mut ChaCha8Rng) -> Field {
    let half = 0.5 * grid.extent();
    let bumps: Vec<([f64; 2], f64, f64)> = (0..4)
        .map(|_| {
            (
                [rng.gen_range(-half..half), rng.gen_range(-half..half)],
                rng.gen_range(0.05..0.15) * grid.extent(),
                rng.gen_range(-1.0..1.0),
            )
        })
        .collect();
    let dim = grid.dim();
    Field::from_fn(grid, |x| {
        bumps
            .iter()
            .map(|(c, w, a)| {
                let dy = if dim == 2 { x[1] - c[1] } else { 0.0 };
                a * (-((x[0] - c[0]).powi(2) + dy * dy) / (w * w)).exp()
            })
            .sum()
    })
}

// mollified sum of random indicator boxes
fn random_mollified(grid: Grid, eps: f64, rng: &mut ChaCha8Rng) -> Result<Field, CliError> {
    let half = 0.5 * grid.extent();
    let boxes: Vec<([f64; 2], [f64; 2], f64)> = (0..rng.gen_range(1..4))
        .map(|_| {
            let lo = [rng.gen_range(-half..half), rng.gen_range(-half..half)];
            let w = [rng.gen_range(0.3..1.5), rng.gen_range(0.3..1.5)];
            (lo, [lo[0] + w[0], lo[1] + w[1]], rng.gen_range(0.2..2.0))
        })
        .collect();
    let dim = grid.dim();
    let raw = Field::from_fn(grid, |x| {
        boxes
            .iter()
            .filter(|(lo, hi, _)| x[0] > lo[0] && x[0] < hi[0] && (dim == 1 || (x[1] > lo[1] && x[1] < hi[1])))
            .map(|b| b.2)
            .sum()
    });
    Ok(mollify(&raw, &Mollifier::new(eps, dim)?)?)
}

pub fn operator_check(ctx: &mut RunContext, cfg: &config::OperatorCheck) -> Result<Report, CliError> {
    let params = FracParams::new(cfg.theta, cfg.dim, cfg.p)?;
    let grid = Grid::new(cfg.dim, cfg.extent, cfg.points())?;
    let mut rng = rng(ctx);
    let mut rep = Report::new("operator-check");
    rep.param("theta", cfg.theta);
    rep.param("dim", cfg.dim);
    rep.param("p", cfg.p);

    let mut defect: f64 = 0.0;
    for _ in 0..cfg.pairs {
        let f = random_smooth(grid, &mut rng);
        let g = random_smooth(grid, &mut rng);
        defect = defect.max(selfadjoint_defect(&f, &g, &params));
    }
    rep.check("selfadjoint_defect", Check::below(defect, 1e-10));

    let mut gap = f64::INFINITY;
    let mut mass_err: f64 = 0.0;
    for _ in 0..cfg.jensen_fields {
        let f = random_mollified(grid, cfg.mollifier_epsilon, &mut rng)?;
        let g = jensen_gap(&f, &params)?;
        gap = gap.min(g.min() / f.max_abs().powf(params.conjugate()));
        let m = Mollifier::new(cfg.mollifier_epsilon, cfg.dim)?;
        let again = mollify(&f, &m)?;
        mass_err = mass_err.max((again.integral() - f.integral()).abs() / f.integral());
    }
    rep.check("jensen_gap_min_scaled", Check::above(gap, -1e-8));
    rep.check("mollify_mass_rel_error", Check::below(mass_err, 1e-8));

    if cfg.theta < 2.0 {
        let m = Mollifier::new(0.5, cfg.dim)?;
        let pairs: Vec<(Vec<f64>, Vec<f64>)> = (0..cfg.pairs)
            .map(|_| (random_point(&mut rng, cfg.dim, 0.6), random_point(&mut rng, cfg.dim, 0.6)))
            .collect();
        let anti = check_mollifier_antisymmetry(&m, &params, &pairs, cfg.pv_cutoff)?;
        rep.check("mollifier_antisymmetry", Check::below(anti, if cfg.dim == 1 { 1e-6 } else { 1e-4 }));
        let mut negative = 0;
        for _ in 0..cfg.exterior_points {
            let r = rng.gen_range(0.55..5.0);
            let a = rng.gen_range(0.0..2.0 * PI);
            let x = if cfg.dim == 1 {
                vec![if rng.gen_bool(0.5) { r } else { -r }]
            } else {
                vec![r * a.cos(), r * a.sin()]
            };
            if apply_fraclap_pv(|z| m.eval(z), &x, &params, cfg.pv_cutoff)? < 0.0 {
                negative += 1;
            }
        }
        rep.check("exterior_sign_negative", Check::flag(negative == cfg.exterior_points));
        rep.check("exterior_points_negative", Check::info(negative as f64));
    }
    Ok(rep)
}

pub fn dirichlet_check(ctx: &mut RunContext, cfg: &config::DirichletCheck) -> Result<Report, CliError> {
    let op = DirichletOperator::assemble(BallGrid::new(cfg.dim, cfg.points_per_axis)?, cfg.theta)?;
    let mut rep = Report::new("dirichlet-check");
    rep.param("theta", cfg.theta);
    rep.param("dim", cfg.dim);
    rep.param("points_per_axis", cfg.points_per_axis);
    let ev = op.eigenvalues();
    let head: Vec<f64> = ev.iter().take(cfg.eigenvalues_reported).copied().collect();
    rep.check("orthonormality_defect", Check::below(op.orthonormality_defect(), 1e-10));
    if cfg.theta == 2.0 && cfg.dim == 1 {
        rep.check("eigenvalue_1", Check::relative(ev[0], PI * PI / 4.0, 0.02));
        rep.check("eigenvalue_2", Check::relative(ev[1], PI * PI, 0.02));
    }
    let kernel = DirichletKernel::new(op);
    let free = KernelEvaluator::with_defaults(FracParams::new(cfg.theta, cfg.dim, 2.0)?)?;
    let grid = kernel.operator().grid();
    let h = grid.spacing();
    let interior: Vec<usize> = (0..grid.len()).filter(|&i| grid.boundary_distance()[i] > 1.5 * h).collect();
    let mut rng = rng(ctx);
    let mut bands = Vec::new();
    for &t in &cfg.times {
        let samples: Vec<(usize, usize, f64)> = (0..cfg.samples)
            .map(|_| {
                let x = interior[rng.gen_range(0..interior.len())];
                let y = interior[rng.gen_range(0..interior.len())];
                (x, y, t)
            })
            .collect();
        for b in kernel.verify_two_sided(&samples, &cfg.constants, &free)? {
            if b.c == 1.0 {
                rep.check(&format!("band_min_c1_t{t}"), Check::above(b.min, 1e-3));
                rep.check(&format!("band_finite_c1_t{t}"), Check::flag(b.max.is_finite()));
            }
            bands.push(json!({"c": b.c, "t": t, "min": b.min, "max": b.max, "samples": b.samples}));
        }
    }
    let centre = grid.nearest(&vec![0.0; cfg.dim]);
    let mut other_pt = vec![0.0; cfg.dim];
    other_pt[0] = 0.4;
    let other = grid.nearest(&other_pt);
    let (t, s) = (0.1, 0.2);
    let row_t = kernel.heat_kernel_row(centre, t)?;
    let row_s = kernel.heat_kernel_row(other, s)?;
    let vol = h.powi(cfg.dim as i32);
    let composed: f64 = row_t.iter().zip(&row_s).map(|(a, b)| a * b).sum::<f64>() * vol;
    let direct = kernel.heat_kernel(centre, other, t + s)?;
    rep.check("semigroup_defect", Check::below((composed - direct).abs() / direct, 1e-8));
    rep.check("mass_below_one", Check::below(kernel.mass(centre, 0.1)?, 1.0 + 1e-9));
    rep.data = json!({"eigenvalues_head": head, "bands": bands});
    Ok(rep)
}

fn delta_for(k: f64, theta: f64) -> f64 {
    2f64.powf(-k / theta)
}

pub fn testfn_build(ctx: &mut RunContext, cfg: &config::TestfnBuild) -> Result<Report, CliError> {
    let op = DirichletOperator::assemble(BallGrid::new(cfg.dim, cfg.points())?, cfg.theta)?;
    let p = 1.0 + cfg.theta / cfg.dim as f64;
    let mut rep = Report::new("testfn-build");
    rep.param("theta", cfg.theta);
    rep.param("dim", cfg.dim);
    rep.param("p", p);
    rep.param("delta_exp", cfg.delta_exp);

    let delta = delta_for(cfg.delta_exp, cfg.theta);
    let forcing = build_forcing(delta, cfg.theta, cfg.smoothing_width)?;
    let tf = solve_ahe(&forcing, &op, cfg.time_steps)?;
    let lb = check_initial_lower_bound(&tf)?;
    rep.check("c_delta", Check::info(tf.c_delta()));
    rep.check("c_min", Check::above(lb.c_min, 0.0));
    let base = rhs_functional(&tf, p)?;
    rep.check("rhs_functional", Check::info(base));
    let mut spread: f64 = 0.0;
    for &tau in &cfg.taus {
        let v = rhs_functional(&rescale(&tf, tau)?, p)?;
        spread = spread.max((v - base).abs() / base);
    }
    rep.check("tau_spread", Check::below(spread, 0.05));

    if !cfg.slope_sweep.is_empty() {
        let (mut xs, mut ys) = (Vec::new(), Vec::new());
        for &k in &cfg.slope_sweep {
            let d = delta_for(k, cfg.theta);
            let t = solve_ahe(&build_forcing(d, cfg.theta, cfg.smoothing_width)?, &op, cfg.time_steps)?;
            xs.push(c_delta(d, cfg.theta)?.ln());
            ys.push(rhs_functional(&t, p)?.ln());
        }
        rep.check("critical_slope", Check::relative(ls_slope(&xs, &ys), 1.0 / (p - 1.0), 0.1));
    }

    let ball = tf.grid();
    let profile: Vec<Vec<String>> = lb
        .profile
        .iter()
        .map(|(r, v)| vec![num(*r), num(*v)])
        .collect();
    ctx.write_csv("lower_bound.csv", &["radius", "value"], &profile)?;
    let mut rows = Vec::with_capacity(ball.len());
    for i in 0..ball.len() {
        let mut r: Vec<String> = ball.node(i).iter().map(|v| num(*v)).collect();
        r.push(num(tf.frame(0)[i]));
        rows.push(r);
    }
    let header: &[&str] = if cfg.dim == 1 { &["x", "value"] } else { &["x", "y", "value"] };
    ctx.write_csv("initial_slice.csv", header, &rows)?;
    if cfg.write_frames {
        let tensor = Grid::new(cfg.dim, 1.0, cfg.points())?;
        let mut w = ctx.create("frames.bin")?;
        for k in 0..=tf.time_steps() {
            let t = k as f64 / tf.time_steps() as f64 * tf.horizon();
            let field = Field::from_fn(tensor, |x| tf.eval(&x[..cfg.dim], t));
            write_field(&field, &mut w)?;
        }
    }
    rep.data = json!({"delta": delta, "time_steps": tf.time_steps(), "support_radius": tf.support_radius()});
    Ok(rep)
}

pub fn capacity_check(ctx: &mut RunContext, cfg: &config::CapacityCheck) -> Result<Report, CliError> {
    cfg.measure.validate()?;
    let dim = cfg.measure.dim().unwrap_or(1);
    let sigmas = cfg.sigma_grid();
    let cap = necessary_check(&cfg.measure, cfg.t_end, cfg.p, cfg.theta, dim, cfg.gamma, &sigmas)?;
    let mut rep = Report::new("capacity-check");
    rep.param("theta", cfg.theta);
    rep.param("dim", dim);
    rep.param("p", cfg.p);
    rep.param("t_end", cfg.t_end);
    rep.param("gamma", cfg.gamma);
    let violations = cap.verdicts.iter().filter(|v| **v == Verdict::Violated).count();
    rep.check("violations", Check::info(violations as f64));

    let rows: Vec<Vec<String>> = (0..sigmas.len())
        .map(|i| {
            let v = if cap.verdicts[i] == Verdict::Violated { "violated" } else { "satisfied" };
            vec![num(cap.sigma_grid[i]), num(cap.sup_ball_mass[i]), num(cap.bound_values[i]), v.into()]
        })
        .collect();
    ctx.write_csv("capacity.csv", &["sigma", "sup_mass", "bound", "verdict"], &rows)?;
    ctx.write_json("capacity.json", &cap)?;

    let fit = &cfg.cutoff_fit;
    if fit.enabled && !cap.critical {
        let (extent, points) = match dim {
            1 => (fit.extent.unwrap_or(16.0), fit.points_per_axis.unwrap_or(4096)),
            _ => (fit.extent.unwrap_or(8.0), fit.points_per_axis.unwrap_or(512)),
        };
        let grid = Grid::new(dim, extent, points)?;
        let centre = vec![0.0; dim];
        let (mut xs, mut ys) = (Vec::new(), Vec::new());
        for &s in &fit.sigmas {
            let c = CutoffPair::new(s, cfg.theta, &grid, &centre, s.powf(cfg.theta))?;
            xs.push(s.ln());
            ys.push(kihon_rhs(&TestFn::Cutoff(c), cfg.p, cfg.theta)?.ln());
        }
        let target = dim as f64 - cfg.theta / (cfg.p - 1.0);
        rep.check("cutoff_exponent", Check::relative(ls_slope(&xs, &ys), target, 0.1));
    }
    rep.data = serde_json::to_value(&cap).map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(rep)
}
