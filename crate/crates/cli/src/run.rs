use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::Value;

pub const VERSION: &str = concat!("fracheat ", env!("CARGO_PKG_VERSION"));

/// One reported number with its acceptance rule.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Check {
    pub value: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target: Option<f64>,
    /// `None` marks an informational value.
    pub tolerance: Option<f64>,
    pub pass: bool,
}

impl Check {
    pub fn info(value: f64) -> Self {
        Self { value, target: None, tolerance: None, pass: true }
    }

    /// Passes when `value < tolerance`.
    pub fn below(value: f64, tolerance: f64) -> Self {
        Self { value, target: None, tolerance: Some(tolerance), pass: value < tolerance }
    }

    /// Passes when `value > tolerance`.
    pub fn above(value: f64, tolerance: f64) -> Self {
        Self { value, target: None, tolerance: Some(tolerance), pass: value > tolerance }
    }

    /// Relative agreement with a target; zero targets fall back to an
    /// absolute comparison.
    pub fn relative(value: f64, target: f64, tolerance: f64) -> Self {
        let scale = if target == 0.0 { 1.0 } else { target.abs() };
        let err = (value - target).abs() / scale;
        Self { value, target: Some(target), tolerance: Some(tolerance), pass: err <= tolerance }
    }

    pub fn flag(value: bool) -> Self {
        Self { value: if value { 1.0 } else { 0.0 }, target: Some(1.0), tolerance: Some(0.0), pass: value }
    }
}

/// Uniform `report.json` body written by every subcommand.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Report {
    pub command: String,
    pub params: BTreeMap<String, Value>,
    pub checks: BTreeMap<String, Check>,
    #[serde(default)]
    pub data: Value,
}

impl Report {
    pub fn new(command: &str) -> Self {
        Self { command: command.into(), ..Default::default() }
    }

    pub fn param(&mut self, key: &str, v: impl Serialize) {
        self.params.insert(key.into(), serde_json::to_value(v).expect("serialisable"));
    }

    pub fn check(&mut self, key: &str, c: Check) {
        self.checks.insert(key.into(), c);
    }

    pub fn failed(&self) -> Vec<String> {
        self.checks.iter().filter(|(_, c)| !c.pass).map(|(k, _)| k.clone()).collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_echo: Value,
    pub git_like_version: String,
    pub wall_time: f64,
    pub outputs: Vec<PathBuf>,
    pub seed: u64,
}

#[derive(Debug, Serialize)]
pub struct FailureRecord<'a> {
    pub command: &'a str,
    pub kind: &'a str,
    pub message: String,
    pub failed_checks: Vec<String>,
}

/// Output directory plus the list of files written so far.
pub struct RunContext {
    pub command: String,
    pub out: PathBuf,
    pub seed: u64,
    outputs: Vec<PathBuf>,
    started: Instant,
}

impl RunContext {
    pub fn new(command: &str, out: &Path, seed: u64) -> std::io::Result<Self> {
        fs::create_dir_all(out)?;
        Ok(Self {
            command: command.into(),
            out: out.to_path_buf(),
            seed,
            outputs: Vec::new(),
            started: Instant::now(),
        })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        let p = self.out.join(name);
        if !self.outputs.contains(&p) {
            self.outputs.push(p.clone());
        }
        p
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> std::io::Result<PathBuf> {
        let p = self.path(name);
        let mut text = serde_json::to_string_pretty(value).map_err(std::io::Error::other)?;
        text.push('\n');
        fs::write(&p, text)?;
        Ok(p)
    }

    pub fn write_text(&mut self, name: &str, text: &str) -> std::io::Result<PathBuf> {
        let p = self.path(name);
        fs::write(&p, text)?;
        Ok(p)
    }

    pub fn write_csv(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) -> std::io::Result<PathBuf> {
        let p = self.path(name);
        let mut w = csv::Writer::from_path(&p).map_err(std::io::Error::other)?;
        w.write_record(header).map_err(std::io::Error::other)?;
        for r in rows {
            w.write_record(r).map_err(std::io::Error::other)?;
        }
        w.flush()?;
        Ok(p)
    }

    pub fn create(&mut self, name: &str) -> std::io::Result<BufWriter<File>> {
        let p = self.path(name);
        Ok(BufWriter::new(File::create(p)?))
    }

    /// Writes `manifest.json`, listing itself among the outputs.
    pub fn finish(mut self, config_echo: Value) -> std::io::Result<PathBuf> {
        let p = self.path("manifest.json");
        let manifest = RunManifest {
            command: self.command.clone(),
            config_echo,
            git_like_version: VERSION.into(),
            wall_time: self.started.elapsed().as_secs_f64(),
            outputs: self.outputs.clone(),
            seed: self.seed,
        };
        let mut f = File::create(&p)?;
        serde_json::to_writer_pretty(&mut f, &manifest).map_err(std::io::Error::other)?;
        f.write_all(b"\n")?;
        Ok(p)
    }
}

/// Shortest round-trip text for CSV cells.
pub fn num(v: f64) -> String {
    format!("{v:e}")
}
