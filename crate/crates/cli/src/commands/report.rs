use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use fracheat_core::kernel::ls_slope;
use serde_json::{json, Value};

use crate::run::{Check, Report, RunContext, RunManifest};
use crate::CliError;

struct Run {
    dir: PathBuf,
    manifest: RunManifest,
    report: Report,
}

fn manifest_path(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join("manifest.json")
    } else {
        p.to_path_buf()
    }
}

fn load(p: &Path) -> Result<Run, String> {
    let mp = manifest_path(p);
    let text = std::fs::read_to_string(&mp).map_err(|e| format!("{}: {e}", mp.display()))?;
    let manifest: RunManifest = serde_json::from_str(&text).map_err(|e| format!("{}: {e}", mp.display()))?;
    let rp = manifest
        .outputs
        .iter()
        .find(|o| o.file_name().is_some_and(|n| n == "report.json"))
        .cloned()
        .ok_or_else(|| format!("{}: no report.json among outputs", mp.display()))?;
    let text = std::fs::read_to_string(&rp).map_err(|e| format!("{}: {e}", rp.display()))?;
    let report: Report = serde_json::from_str(&text).map_err(|e| format!("{}: {e}", rp.display()))?;
    let dir = mp.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(Run { dir, manifest, report })
}

fn param_f64(r: &Report, key: &str) -> Option<f64> {
    r.params.get(key).and_then(Value::as_f64)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6e}")).unwrap_or_default()
}

fn pass(c: &Check) -> &'static str {
    if c.pass {
        "PASS"
    } else {
        "FAIL"
    }
}

struct Fitted {
    quantity: String,
    params: String,
    check: Check,
}

// threshold scaling λ*(T) across sweeps that share everything but T
fn threshold_fits(runs: &[Run]) -> Vec<Fitted> {
    let mut groups: BTreeMap<String, (f64, f64, f64, Vec<(f64, f64)>)> = BTreeMap::new();
    for r in runs.iter().filter(|r| r.report.command == "she-sweep") {
        let rep = &r.report;
        let (Some(theta), Some(dim), Some(p), Some(t)) =
            (param_f64(rep, "theta"), param_f64(rep, "dim"), param_f64(rep, "p"), param_f64(rep, "t_end"))
        else {
            continue;
        };
        let Some(ls) = rep.checks.get("lambda_star") else { continue };
        let shape = rep.params.get("shape").map(Value::to_string).unwrap_or_default();
        let key = format!("theta={theta} dim={dim} p={p} shape={shape}");
        groups.entry(key).or_insert((theta, dim, p, Vec::new())).3.push((t.ln(), ls.value.ln()));
    }
    groups
        .into_iter()
        .filter(|(_, g)| g.3.len() >= 2)
        .map(|(key, (theta, dim, p, pts))| {
            let (xs, ys): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
            let target = dim / theta - 1.0 / (p - 1.0);
            Fitted {
                quantity: "threshold scaling d ln λ*/d ln T".into(),
                params: key,
                check: Check::relative(ls_slope(&xs, &ys), target, 0.1),
            }
        })
        .collect()
}

fn describe(rep: &Report) -> String {
    let mut parts: Vec<String> = ["theta", "dim", "p"]
        .iter()
        .filter_map(|k| rep.params.get(*k).map(|v| format!("{k}={v}")))
        .collect();
    if let Some(t) = rep.params.get("t_end") {
        parts.push(format!("T={t}"));
    }
    parts.join(" ")
}

/// Merges the runs behind `paths` into `report.md` and `report.csv` under
/// `out`. Unreadable manifests are listed and make the command fail after
/// the bundle is written.
pub fn report(out: &Path, paths: &[PathBuf]) -> Result<bool, CliError> {
    let mut ctx = RunContext::new("report", out, 0)?;
    let mut runs = Vec::new();
    let mut errors = Vec::new();
    for p in paths {
        match load(p) {
            Ok(r) => runs.push(r),
            Err(e) => errors.push(e),
        }
    }

    let mut md = String::from("# fracheat report\n\n");
    let _ = writeln!(md, "{} run(s) merged, {} error(s).\n", runs.len(), errors.len());

    md.push_str("## Runs\n\n| command | directory | parameters | seed | version | wall time (s) |\n|---|---|---|---|---|---|\n");
    for r in &runs {
        let _ = writeln!(
            md,
            "| {} | {} | {} | {} | {} | {:.2} |",
            r.manifest.command,
            r.dir.display(),
            describe(&r.report),
            r.manifest.seed,
            r.manifest.git_like_version,
            r.manifest.wall_time
        );
    }

    let kernel: Vec<&Run> = runs.iter().filter(|r| r.report.command == "kernel-check").collect();
    if !kernel.is_empty() {
        md.push_str("\n## Kernel checks\n\n| θ | N | scaling error | decay slope | decay target | monotone | status |\n|---|---|---|---|---|---|---|\n");
        for r in kernel {
            let c = &r.report.checks;
            let slope = c.get("decay_slope");
            let ok = c.values().all(|c| c.pass);
            let _ = writeln!(
                md,
                "| {} | {} | {} | {} | {} | {} | {} |",
                r.report.params.get("theta").unwrap_or(&Value::Null),
                r.report.params.get("dim").unwrap_or(&Value::Null),
                fmt_opt(c.get("scaling_max_rel_error").map(|c| c.value)),
                fmt_opt(slope.map(|c| c.value)),
                fmt_opt(slope.and_then(|c| c.target)),
                c.get("radial_monotone").map(pass).unwrap_or(""),
                if ok { "PASS" } else { "FAIL" }
            );
        }
    }

    let mut fitted: Vec<Fitted> = Vec::new();
    for r in &runs {
        for (key, quantity) in [
            ("decay_slope", "kernel tail exponent"),
            ("cutoff_exponent", "cutoff functional exponent"),
            ("critical_slope", "critical functional slope"),
        ] {
            if let Some(c) = r.report.checks.get(key) {
                fitted.push(Fitted { quantity: quantity.into(), params: describe(&r.report), check: c.clone() });
            }
        }
    }
    fitted.extend(threshold_fits(&runs));
    if !fitted.is_empty() {
        md.push_str("\n## Fitted exponents\n\n| quantity | parameters | fitted | target | tolerance | status |\n|---|---|---|---|---|---|\n");
        for f in &fitted {
            let _ = writeln!(
                md,
                "| {} | {} | {:.4} | {} | {} | {} |",
                f.quantity,
                f.params,
                f.check.value,
                fmt_opt(f.check.target),
                fmt_opt(f.check.tolerance),
                pass(&f.check)
            );
        }
    }

    let mut rows = Vec::new();
    if !runs.is_empty() {
        md.push_str("\n## Checks\n\n| command | directory | check | value | target | tolerance | status |\n|---|---|---|---|---|---|---|\n");
    }
    for r in &runs {
        for (name, c) in &r.report.checks {
            let _ = writeln!(
                md,
                "| {} | {} | {} | {:.6e} | {} | {} | {} |",
                r.report.command,
                r.dir.display(),
                name,
                c.value,
                fmt_opt(c.target),
                fmt_opt(c.tolerance),
                pass(c)
            );
            rows.push(vec![
                r.report.command.clone(),
                r.dir.display().to_string(),
                name.clone(),
                format!("{:e}", c.value),
                c.target.map(|v| format!("{v:e}")).unwrap_or_default(),
                c.tolerance.map(|v| format!("{v:e}")).unwrap_or_default(),
                c.pass.to_string(),
            ]);
        }
    }
    for f in fitted.iter().filter(|f| f.quantity.starts_with("threshold")) {
        rows.push(vec![
            "report".into(),
            f.params.clone(),
            "threshold_scaling".into(),
            format!("{:e}", f.check.value),
            f.check.target.map(|v| format!("{v:e}")).unwrap_or_default(),
            f.check.tolerance.map(|v| format!("{v:e}")).unwrap_or_default(),
            f.check.pass.to_string(),
        ]);
    }

    if !errors.is_empty() {
        md.push_str("\n## Errors\n\n");
        for e in &errors {
            let _ = writeln!(md, "- {e}");
        }
    }

    ctx.write_text("report.md", &md)?;
    ctx.write_csv("report.csv", &["command", "run", "check", "value", "target", "tolerance", "pass"], &rows)?;
    ctx.finish(json!({ "paths": paths }))?;
    if errors.is_empty() {
        Ok(true)
    } else {
        Err(CliError::Usage(format!("{} manifest(s) missing or unreadable: {}", errors.len(), errors.join("; "))))
    }
}
