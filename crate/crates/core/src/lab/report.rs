//! Report types and their on-disk artifacts.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, SweepVariable};
use super::fit::SlopeFit;
use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

/// Name of the only field allowed to differ between reruns.
pub const TIMESTAMP_FIELD: &str = "created_unix";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fingerprint {
    pub schema_version: u32,
    pub study: String,
    pub config_hash: String,
    pub seed: u64,
    pub created_unix: u64,
}

impl Fingerprint {
    pub fn new(study: &str, cfg: &ExperimentConfig) -> Self {
        let created_unix =
            std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        Fingerprint {
            schema_version: SCHEMA_VERSION,
            study: study.to_string(),
            config_hash: cfg.hash(),
            seed: cfg.seed,
            created_unix,
        }
    }
}

/// A single asserted band or flag.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Assertion {
    pub name: String,
    pub value: f64,
    pub lo: Option<f64>,
    pub hi: Option<f64>,
    pub passed: bool,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub detail: String,
}

impl Assertion {
    pub fn within(name: impl Into<String>, value: f64, lo: f64, hi: f64) -> Self {
        Assertion {
            name: name.into(),
            value,
            lo: Some(lo),
            hi: Some(hi),
            passed: value >= lo && value <= hi,
            detail: String::new(),
        }
    }

    pub fn at_most(name: impl Into<String>, value: f64, hi: f64) -> Self {
        Assertion { name: name.into(), value, lo: None, hi: Some(hi), passed: value <= hi, detail: String::new() }
    }

    pub fn at_least(name: impl Into<String>, value: f64, lo: f64) -> Self {
        Assertion { name: name.into(), value, lo: Some(lo), hi: None, passed: value >= lo, detail: String::new() }
    }

    /// A boolean outcome; `value` is 1 for true.
    pub fn flag(name: impl Into<String>, ok: bool) -> Self {
        Assertion {
            name: name.into(),
            value: if ok { 1.0 } else { 0.0 },
            lo: Some(1.0),
            hi: None,
            passed: ok,
            detail: String::new(),
        }
    }

    pub fn with_detail(mut self, detail: impl Into<String>) -> Self {
        self.detail = detail.into();
        self
    }
}

/// One (cell, trial) measurement.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialValue {
    pub trial: usize,
    /// `None` when the trial failed (e.g. diverged).
    pub w1: Option<f64>,
    /// Evaluation error of this single measurement.
    pub stderr: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub diverged: bool,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extra: BTreeMap<String, f64>,
}

impl TrialValue {
    pub fn ok(trial: usize, w1: f64, stderr: f64) -> Self {
        TrialValue { trial, w1: Some(w1), stderr, error: None, diverged: false, extra: BTreeMap::new() }
    }

    pub fn failed(trial: usize, error: &Error) -> Self {
        TrialValue {
            trial,
            w1: None,
            stderr: 0.0,
            error: Some(error.to_string()),
            diverged: matches!(error, Error::Divergence { .. } | Error::Training { .. }),
            extra: BTreeMap::new(),
        }
    }

    pub fn with(mut self, key: &str, v: f64) -> Self {
        self.extra.insert(key.to_string(), v);
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub x: f64,
    pub trials: Vec<TrialValue>,
    pub mean: Option<f64>,
    pub stddev: Option<f64>,
    /// Standard error of the mean across trials.
    pub stderr: Option<f64>,
    /// Mean per-trial evaluation error.
    pub eval_stderr: Option<f64>,
    /// Every trial failed.
    pub failed: bool,
    /// Below the noise floor, or failed; not used in the fit.
    pub excluded: bool,
    /// Trial means of the per-trial extras.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extra: BTreeMap<String, f64>,
}

impl Cell {
    /// Aggregates trials sorted by index, so the result does not depend on
    /// completion order.
    pub fn aggregate(x: f64, mut trials: Vec<TrialValue>) -> Self {
        trials.sort_by_key(|t| t.trial);
        let ok: Vec<&TrialValue> = trials.iter().filter(|t| t.w1.is_some()).collect();
        let vals: Vec<f64> = ok.iter().filter_map(|t| t.w1).collect();
        let k = vals.len();
        let mean = (k > 0).then(|| vals.iter().sum::<f64>() / k as f64);
        let stddev =
            mean.filter(|_| k > 1).map(|m| (vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (k - 1) as f64).sqrt());
        let stderr = stddev.map(|s| s / (k as f64).sqrt());
        let eval_stderr = (k > 0).then(|| ok.iter().map(|t| t.stderr).sum::<f64>() / k as f64);
        let mut extra = BTreeMap::new();
        for key in ok.iter().flat_map(|t| t.extra.keys()).collect::<std::collections::BTreeSet<_>>() {
            let vs: Vec<f64> = ok.iter().filter_map(|t| t.extra.get(key).copied()).collect();
            extra.insert(key.clone(), vs.iter().sum::<f64>() / vs.len() as f64);
        }
        Cell { x, trials, mean, stddev, stderr, eval_stderr, failed: k == 0, excluded: k == 0, extra }
    }

    pub fn diverged(&self) -> bool {
        self.trials.iter().any(|t| t.diverged)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    #[serde(flatten)]
    pub fingerprint: Fingerprint,
    pub sweep: SweepVariable,
    pub cells: Vec<Cell>,
    pub noise_floor: f64,
    pub floor_rule: String,
    pub fit: Option<SlopeFit>,
    pub band: [f64; 2],
    pub assertions: Vec<Assertion>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub diagnostics: BTreeMap<String, f64>,
    pub notes: Vec<String>,
    pub passed: bool,
}

impl RateReport {
    pub fn excluded_cells(&self) -> Vec<f64> {
        self.cells.iter().filter(|c| c.excluded).map(|c| c.x).collect()
    }

    pub fn any_divergence(&self) -> bool {
        self.cells.iter().any(Cell::diverged)
    }

    pub fn failed_assertions(&self) -> Vec<&Assertion> {
        self.assertions.iter().filter(|a| !a.passed).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    #[serde(flatten)]
    pub fingerprint: Fingerprint,
    pub assertions: Vec<Assertion>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub diagnostics: BTreeMap<String, f64>,
    pub notes: Vec<String>,
    pub passed: bool,
}

impl CheckReport {
    pub fn new(fingerprint: Fingerprint, assertions: Vec<Assertion>, notes: Vec<String>) -> Self {
        let passed = !assertions.is_empty() && assertions.iter().all(|a| a.passed);
        CheckReport { fingerprint, assertions, diagnostics: BTreeMap::new(), notes, passed }
    }

    pub fn failed_assertions(&self) -> Vec<&Assertion> {
        self.assertions.iter().filter(|a| !a.passed).collect()
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn fmt(v: Option<f64>) -> String {
    v.map_or_else(|| "nan".to_string(), |x| x.to_string())
}

/// cells.csv: one row per (cell, trial).
pub fn write_cells_csv(path: &Path, cells: &[Cell]) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    writeln!(f, "cell,trial,w1,stderr")?;
    for (i, c) in cells.iter().enumerate() {
        for t in &c.trials {
            writeln!(f, "{i},{},{},{}", t.trial, fmt(t.w1), fmt(Some(t.stderr)))?;
        }
    }
    f.flush()?;
    Ok(())
}

/// plot.csv: one row per cell with the fitted curve.
pub fn write_plot_csv(path: &Path, cells: &[Cell], fit: Option<&SlopeFit>) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    writeln!(f, "x,mean,stderr,fit")?;
    for c in cells {
        writeln!(f, "{},{},{},{}", c.x, fmt(c.mean), fmt(c.stderr), fmt(fit.map(|s| s.predict(c.x))))?;
    }
    f.flush()?;
    Ok(())
}

/// Writes report.json, cells.csv and plot.csv into `dir`.
pub fn write_rate_artifacts(dir: &Path, report: &RateReport) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_cells_csv(&dir.join("cells.csv"), &report.cells)?;
    write_plot_csv(&dir.join("plot.csv"), &report.cells, report.fit.as_ref())?;
    write_json(&dir.join("report.json"), report)
}

/// The report text with the timestamp field blanked, for rerun comparisons.
pub fn without_timestamp(report_json: &str) -> Result<String> {
    let mut v: serde_json::Value = serde_json::from_str(report_json)?;
    if let Some(o) = v.as_object_mut() {
        o.remove(TIMESTAMP_FIELD);
    }
    Ok(serde_json::to_string_pretty(&v)?)
}
