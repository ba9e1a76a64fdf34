use fracheat_core::capacity::{critical_bound, subcritical_bound, sup_ball_mass, SEARCH_FRACTION};
use fracheat_core::she_solver::{
    integral_residual, integrate, picard_duhamel, test_bank, threshold_sweep, weak_residual, Scheme, Status,
};
use fracheat_core::spectral_core::io::write_field;
use serde_json::json;

use crate::config::{self, sigma_grid};
use crate::run::{num, Check, Report, RunContext};
use crate::CliError;

fn status_name(s: &Status) -> &'static str {
    match s {
        Status::Completed => "completed",
        Status::BlewUp { .. } => "blew_up",
        Status::Stalled => "stalled",
    }
}

pub fn she_run(ctx: &mut RunContext, cfg: &config::SheRun) -> Result<Report, CliError> {
    let solver = cfg.solver_config()?;
    cfg.measure.validate()?;
    let mut rep = Report::new("she-run");
    rep.param("theta", cfg.solver.theta);
    rep.param("dim", cfg.solver.dim);
    rep.param("p", cfg.solver.p);
    rep.param("t_end", cfg.solver.t_end);
    rep.param("points_per_axis", solver.grid.points_per_axis());
    rep.param("scheme", solver.scheme);

    let mut picard = None;
    let traj = if solver.scheme == Scheme::PicardDuhamel {
        let r = picard_duhamel(&solver, &cfg.measure, cfg.solver.picard_max_iter)?;
        picard = Some(json!({"iterations": r.iterations, "converged": r.converged, "last_increment": r.last_increment}));
        rep.check("picard_converged", Check::flag(r.converged));
        r.trajectory
    } else {
        integrate(&solver, &cfg.measure)?
    };

    rep.check("max_clamp", Check::below(traj.max_clamp, 1e-12));
    let mass_monotone = traj.series.windows(2).all(|w| w[1].mass >= w[0].mass * (1.0 - 1e-10));
    rep.check("mass_nondecreasing", Check::flag(mass_monotone || !solver.nonlinear));
    if let Some(t) = traj.status.t_blow() {
        rep.check("t_blow", Check::info(t));
    }

    let mut residuals = None;
    if cfg.residuals && traj.status == Status::Completed {
        let ir = integral_residual(&traj)?;
        let mut weak: f64 = 0.0;
        for phi in test_bank(&solver)? {
            weak = weak.max(weak_residual(&traj, &phi, &cfg.measure)?);
        }
        rep.check("integral_residual", Check::info(ir));
        rep.check("weak_residual", Check::info(weak));
        rep.check("residual_implication", Check::flag(ir >= 1e-3 || weak < 1e-2));
        residuals = Some(json!({"integral": ir, "weak": weak}));
    }

    let rows: Vec<Vec<String>> = traj.series.iter().map(|s| vec![num(s.t), num(s.sup), num(s.mass)]).collect();
    ctx.write_csv("series.csv", &["t", "sup", "mass"], &rows)?;
    write_field(traj.final_state(), ctx.create("final_state.bin")?)?;
    if cfg.dump_states {
        let mut w = ctx.create("states.bin")?;
        for s in &traj.states {
            write_field(s, &mut w)?;
        }
    }
    rep.data = json!({
        "status": traj.status,
        "steps": traj.steps,
        "t0": traj.t0,
        "snapshot_times": traj.times,
        "residuals": residuals,
        "picard": picard,
    });
    Ok(rep)
}

pub fn she_sweep(ctx: &mut RunContext, cfg: &config::SheSweep) -> Result<Report, CliError> {
    let solver = cfg.solver_config()?;
    cfg.shape.validate()?;
    let s = &cfg.solver;
    let mut rep = Report::new("she-sweep");
    rep.param("theta", s.theta);
    rep.param("dim", s.dim);
    rep.param("p", s.p);
    rep.param("t_end", s.t_end);
    rep.param("points_per_axis", solver.grid.points_per_axis());
    rep.param("blowup_threshold", solver.blowup_threshold);
    rep.param("shape", &cfg.shape);

    let sweep = threshold_sweep(&cfg.shape, (cfg.lambda_min, cfg.lambda_max), &solver)?;
    rep.check("lambda_star", Check::info(sweep.lambda_star));
    rep.check("bracket_width", Check::info(sweep.upper.lambda - sweep.lower.lambda));

    // largest ball-mass to bound ratio of the shape at γ = 1
    let critical = solver.params.is_critical();
    let mut excess: f64 = 0.0;
    for sigma in sigma_grid(s.t_end, s.theta, cfg.sigma_points, 0.05, 0.99) {
        let m = sup_ball_mass(&cfg.shape, sigma, sigma * SEARCH_FRACTION)?;
        let b = if critical {
            critical_bound(sigma, s.t_end, s.theta, s.dim, 1.0)?
        } else {
            subcritical_bound(sigma, s.p, s.theta, s.dim, 1.0)?
        };
        excess = excess.max(m / b);
    }
    let gamma_hat = sweep
        .runs
        .iter()
        .filter(|r| r.status == Status::Completed)
        .map(|r| r.lambda * excess)
        .fold(0.0, f64::max);
    rep.check("gamma_hat", Check::info(gamma_hat));
    let large_blow = sweep
        .runs
        .iter()
        .filter(|r| r.lambda * excess >= 10.0 * gamma_hat)
        .all(|r| r.status.blew_up());
    rep.check("large_data_blow_up", Check::flag(large_blow));

    let rows: Vec<Vec<String>> = sweep
        .runs
        .iter()
        .map(|r| {
            vec![
                num(r.lambda),
                status_name(&r.status).into(),
                r.status.t_blow().map(num).unwrap_or_default(),
                num(r.final_sup),
                r.steps.to_string(),
            ]
        })
        .collect();
    ctx.write_csv("runs.csv", &["lambda", "status", "t_blow", "final_sup", "steps"], &rows)?;
    rep.data = json!({
        "lambda_star": sweep.lambda_star,
        "lower": sweep.lower,
        "upper": sweep.upper,
        "gamma_hat": gamma_hat,
        "excess_per_lambda": excess,
        "runs": sweep.runs.len(),
    });
    Ok(rep)
}
