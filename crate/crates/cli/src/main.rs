//! `fracheat`: command-line driver for the fractional heat equation lab.

mod commands;
mod config;
mod run;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use run::{FailureRecord, Report, RunContext};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Failure { kind: &'static str, message: String },
}

impl From<fracheat_core::Error> for CliError {
    fn from(e: fracheat_core::Error) -> Self {
        match e {
            fracheat_core::Error::InvalidParameter(m) => CliError::Usage(format!("invalid parameter: {m}")),
            other => CliError::Failure { kind: error_kind(&other), message: other.to_string() },
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Failure { kind: "io", message: e.to_string() }
    }
}

fn error_kind(e: &fracheat_core::Error) -> &'static str {
    use fracheat_core::Error::*;
    match e {
        DomainTooSmall { .. } => "domain_too_small",
        NonFinite { .. } => "non_finite",
        Negative(_) => "negative",
        NoBracket(_) => "no_bracket",
        NonMonotone(_) => "non_monotone",
        NonConvergence(_) => "non_convergence",
        GridTooCoarse(_) => "grid_too_coarse",
        _ => "error",
    }
}

#[derive(Parser)]
#[command(name = "fracheat", version, about = "Fractional semilinear heat equation lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "fracheat-out")]
    out: PathBuf,
    /// Seed for randomised sampling.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Print the default configuration as TOML and exit.
    #[arg(long)]
    print_defaults: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Heat kernel property checks.
    KernelCheck {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        theta: Option<f64>,
        #[arg(long)]
        dim: Option<usize>,
    },
    /// Periodic operator checks: self-adjointness, Jensen gap, mollifier.
    OperatorCheck {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        theta: Option<f64>,
        #[arg(long)]
        dim: Option<usize>,
        #[arg(long)]
        p: Option<f64>,
    },
    /// Restricted operator on the unit ball and its heat kernel.
    DirichletCheck {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        theta: Option<f64>,
        #[arg(long)]
        dim: Option<usize>,
        #[arg(long)]
        points_per_axis: Option<usize>,
    },
    /// Builds the adjoint test function for δ^θ = 2^{-K}.
    TestfnBuild {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        delta_exp: Option<f64>,
        #[arg(long)]
        theta: Option<f64>,
        #[arg(long)]
        dim: Option<usize>,
    },
    /// Compares ball masses of a measure with the capacity bound.
    CapacityCheck {
        #[command(flatten)]
        common: Common,
        /// Measure document (JSON).
        #[arg(long)]
        measure: Option<PathBuf>,
        #[arg(long = "T")]
        t_end: Option<f64>,
        #[arg(long)]
        p: Option<f64>,
        #[arg(long)]
        theta: Option<f64>,
        #[arg(long)]
        gamma: Option<f64>,
    },
    /// Solves the semilinear equation from a measure.
    SheRun {
        #[command(flatten)]
        common: Common,
        /// Initial measure (JSON).
        #[arg(long)]
        measure: Option<PathBuf>,
    },
    /// Bisects the blow-up threshold λ* for data λ·shape.
    SheSweep {
        #[command(flatten)]
        common: Common,
        /// Shape measure (JSON).
        #[arg(long)]
        shape: Option<PathBuf>,
        #[arg(long)]
        lambda_min: Option<f64>,
        #[arg(long)]
        lambda_max: Option<f64>,
    },
    /// Merges run manifests into a markdown and CSV bundle.
    Report {
        #[arg(long, default_value = "fracheat-report")]
        out: PathBuf,
        /// Manifest files or run directories.
        paths: Vec<PathBuf>,
    },
}

fn set_threads() -> Result<(), CliError> {
    if let Ok(v) = std::env::var("FRACHEAT_THREADS") {
        let n: usize = v
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| CliError::Usage(format!("FRACHEAT_THREADS must be a positive integer, got {v:?}")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    Ok(())
}

/// Loads the config, applies flag overrides, runs `body` and writes the
/// report and manifest.
fn execute<C, F>(name: &str, common: &Common, overrides: impl FnOnce(&mut C) -> Result<(), CliError>, body: F) -> Result<bool, CliError>
where
    C: serde::de::DeserializeOwned + Serialize + Default,
    F: FnOnce(&mut RunContext, &C) -> Result<Report, CliError>,
{
    if common.print_defaults {
        print!("{}", config::defaults_toml::<C>());
        return Ok(true);
    }
    let mut cfg: C = config::load(common.config.as_deref())?;
    overrides(&mut cfg)?;
    let mut ctx = RunContext::new(name, &common.out, common.seed)?;
    let echo = serde_json::to_value(&cfg).map_err(|e| CliError::Usage(e.to_string()))?;
    match body(&mut ctx, &cfg) {
        Ok(report) => {
            ctx.write_json("report.json", &report)?;
            let failed = report.failed();
            let ok = failed.is_empty();
            if !ok {
                let rec = FailureRecord {
                    command: name,
                    kind: "assertion",
                    message: format!("{} check(s) failed", failed.len()),
                    failed_checks: failed,
                };
                ctx.write_json("failure.json", &rec)?;
            }
            ctx.finish(echo)?;
            Ok(ok)
        }
        Err(CliError::Failure { kind, message }) => {
            let rec = FailureRecord { command: name, kind, message: message.clone(), failed_checks: vec![] };
            ctx.write_json("failure.json", &rec)?;
            ctx.finish(echo)?;
            Err(CliError::Failure { kind, message })
        }
        Err(e) => Err(e),
    }
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn measure_override(path: Option<&Path>) -> Result<Option<fracheat_core::capacity::MeasureSpec>, CliError> {
    path.map(config::load_measure).transpose()
}

fn dispatch(cli: Cli) -> Result<bool, CliError> {
    match cli.command {
        Command::KernelCheck { common, theta, dim } => execute(
            "kernel-check",
            &common,
            |c: &mut config::KernelCheck| {
                set(&mut c.theta, theta);
                set(&mut c.dim, dim);
                Ok(())
            },
            commands::kernel_check,
        ),
        Command::OperatorCheck { common, theta, dim, p } => execute(
            "operator-check",
            &common,
            |c: &mut config::OperatorCheck| {
                set(&mut c.theta, theta);
                set(&mut c.dim, dim);
                set(&mut c.p, p);
                Ok(())
            },
            commands::operator_check,
        ),
        Command::DirichletCheck { common, theta, dim, points_per_axis } => execute(
            "dirichlet-check",
            &common,
            |c: &mut config::DirichletCheck| {
                set(&mut c.theta, theta);
                set(&mut c.dim, dim);
                set(&mut c.points_per_axis, points_per_axis);
                Ok(())
            },
            commands::dirichlet_check,
        ),
        Command::TestfnBuild { common, delta_exp, theta, dim } => execute(
            "testfn-build",
            &common,
            |c: &mut config::TestfnBuild| {
                set(&mut c.delta_exp, delta_exp);
                set(&mut c.theta, theta);
                set(&mut c.dim, dim);
                Ok(())
            },
            commands::testfn_build,
        ),
        Command::CapacityCheck { common, measure, t_end, p, theta, gamma } => execute(
            "capacity-check",
            &common,
            |c: &mut config::CapacityCheck| {
                set(&mut c.measure, measure_override(measure.as_deref())?);
                set(&mut c.t_end, t_end);
                set(&mut c.p, p);
                set(&mut c.theta, theta);
                set(&mut c.gamma, gamma);
                Ok(())
            },
            commands::capacity_check,
        ),
        Command::SheRun { common, measure } => execute(
            "she-run",
            &common,
            |c: &mut config::SheRun| {
                set(&mut c.measure, measure_override(measure.as_deref())?);
                Ok(())
            },
            commands::she_run,
        ),
        Command::SheSweep { common, shape, lambda_min, lambda_max } => execute(
            "she-sweep",
            &common,
            |c: &mut config::SheSweep| {
                set(&mut c.shape, measure_override(shape.as_deref())?);
                set(&mut c.lambda_min, lambda_min);
                set(&mut c.lambda_max, lambda_max);
                Ok(())
            },
            commands::she_sweep,
        ),
        Command::Report { out, paths } => commands::report(&out, &paths),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let result = set_threads().and_then(|_| dispatch(cli));
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("fracheat: assertion failure; see failure.json");
            ExitCode::from(2)
        }
        Err(CliError::Usage(m)) => {
            eprintln!("fracheat: {m}");
            ExitCode::from(1)
        }
        Err(CliError::Failure { kind, message }) => {
            eprintln!("fracheat: {kind}: {message}");
            ExitCode::from(2)
        }
    }
}
