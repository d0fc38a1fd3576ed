//! Entry point shared by the CLI and the tests: run a study, write its
//! artifacts, map the outcome to an exit status.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::checks::{check_contraction, check_identities, check_tails};
use super::config::{ExperimentConfig, Study, SweepVariable};
use super::report::{write_json, write_rate_artifacts, RateReport};
use super::studies::{rate_study_eps, rate_study_m, rate_study_n, rate_study_t};
use super::train::{run_sample, run_train};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExitStatus {
    Pass,
    Fail,
    Usage,
    Divergence,
}

impl ExitStatus {
    pub fn code(self) -> i32 {
        match self {
            ExitStatus::Pass => 0,
            ExitStatus::Fail => 1,
            ExitStatus::Usage => 2,
            ExitStatus::Divergence => 3,
        }
    }

    pub fn of_error(e: &Error) -> Self {
        match e {
            Error::Config(_) | Error::Argument(_) | Error::Json(_) => ExitStatus::Usage,
            Error::Divergence { .. } | Error::Training { .. } => ExitStatus::Divergence,
            _ => ExitStatus::Fail,
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub status: ExitStatus,
    /// One line per assertion, `PASS`/`FAIL` first.
    pub lines: Vec<String>,
    pub files: Vec<PathBuf>,
}

/// Fixed notation in the readable range, scientific outside it.
fn num(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 || !v.is_finite() || (1e-4..1e6).contains(&a) {
        format!("{v:.6}")
    } else {
        format!("{v:.4e}")
    }
}

fn lines_of<'a>(assertions: impl IntoIterator<Item = &'a super::report::Assertion>) -> Vec<String> {
    assertions
        .into_iter()
        .map(|a| {
            let band = match (a.lo, a.hi) {
                (Some(lo), Some(hi)) => format!(" in [{}, {}]", num(lo), num(hi)),
                (None, Some(hi)) => format!(" <= {}", num(hi)),
                (Some(lo), None) => format!(" >= {}", num(lo)),
                (None, None) => String::new(),
            };
            format!("{} {} = {}{band}", if a.passed { "PASS" } else { "FAIL" }, a.name, num(a.value))
        })
        .collect()
}

fn rate_outcome(dir: &Path, r: &RateReport) -> Result<RunOutcome> {
    write_rate_artifacts(dir, r)?;
    let status = if r.any_divergence() {
        ExitStatus::Divergence
    } else if r.passed {
        ExitStatus::Pass
    } else {
        ExitStatus::Fail
    };
    Ok(RunOutcome {
        status,
        lines: lines_of(&r.assertions),
        files: ["report.json", "cells.csv", "plot.csv"].iter().map(|f| dir.join(f)).collect(),
    })
}

#[derive(Serialize)]
struct ErrorRecord<'a> {
    study: String,
    config_hash: String,
    error: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    partial: Option<&'a str>,
}

/// Runs `study` under `cfg`, writing artifacts into `out`.
pub fn run(study: Study, cfg: &ExperimentConfig, out: &Path) -> Result<RunOutcome> {
    fs::create_dir_all(out)?;
    write_json(&out.join("config.json"), cfg)?;
    let result = run_inner(study, cfg, out);
    if let Err(e) = &result {
        let rec = ErrorRecord { study: study.name(), config_hash: cfg.hash(), error: e.to_string(), partial: None };
        write_json(&out.join("error.json"), &rec)?;
    }
    result
}

fn run_inner(study: Study, cfg: &ExperimentConfig, out: &Path) -> Result<RunOutcome> {
    match study {
        Study::Rates(SweepVariable::N) | Study::EmpiricalMeasure => rate_outcome(out, &rate_study_n(cfg)?),
        Study::Rates(SweepVariable::M) => rate_outcome(out, &rate_study_m(cfg)?),
        Study::Rates(SweepVariable::T) => rate_outcome(out, &rate_study_t(cfg)?),
        Study::Rates(SweepVariable::Eps) => rate_outcome(out, &rate_study_eps(cfg)?),
        Study::Identities | Study::Contraction | Study::Tails => {
            let r = match study {
                Study::Identities => check_identities(cfg)?,
                Study::Contraction => check_contraction(cfg)?,
                _ => check_tails(cfg)?,
            };
            let path = out.join("report.json");
            write_json(&path, &r)?;
            Ok(RunOutcome {
                status: if r.passed { ExitStatus::Pass } else { ExitStatus::Fail },
                lines: lines_of(&r.assertions),
                files: vec![path],
            })
        }
        Study::TrainCd | Study::TrainCt => {
            let run = run_train(cfg, study)?;
            let files = vec![
                out.join("report.json"),
                out.join("checkpoint.json"),
                out.join("loss.csv"),
                out.join("dataset.csv"),
            ];
            run.net.save_json(&files[1])?;
            run.trace.write_csv(&files[2])?;
            run.dataset.save_csv(&files[3])?;
            write_json(&files[0], &run.report)?;
            let mut files = files;
            files.push(out.join("dataset.json"));
            Ok(RunOutcome {
                status: if run.report.passed { ExitStatus::Pass } else { ExitStatus::Fail },
                lines: lines_of(&run.report.assertions),
                files,
            })
        }
        Study::Sample => {
            let (r, cloud) = run_sample(cfg)?;
            let samples = out.join("samples.csv");
            let mut text = String::new();
            let header: Vec<String> = (0..cloud.dim()).map(|i| format!("x{i}")).collect();
            text.push_str(&header.join(","));
            text.push('\n');
            for p in cloud.points() {
                let row: Vec<String> = p.iter().map(|v| v.to_string()).collect();
                text.push_str(&row.join(","));
                text.push('\n');
            }
            fs::write(&samples, text)?;
            let path = out.join("report.json");
            write_json(&path, &r)?;
            Ok(RunOutcome {
                status: if r.passed { ExitStatus::Pass } else { ExitStatus::Fail },
                lines: lines_of(&r.assertions),
                files: vec![path, samples],
            })
        }
    }
}

/// Command-line overrides applied on top of the loaded config.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub checkpoint: Option<PathBuf>,
}

/// Loads the config (built-in defaults when `config` is `None`), applies
/// the overrides and runs. Errors are folded into the exit status.
pub fn run_file(
    study: Study,
    config: Option<&Path>,
    out: &Path,
    overrides: &Overrides,
) -> (ExitStatus, std::result::Result<RunOutcome, Error>) {
    let cfg = match config {
        Some(p) => ExperimentConfig::load(study, p),
        None => Ok(ExperimentConfig::defaults(study)),
    };
    let mut cfg = match cfg {
        Ok(c) => c,
        Err(e) => return (ExitStatus::Usage, Err(e)),
    };
    if let Some(s) = overrides.seed {
        cfg.seed = s;
    }
    if overrides.threads.is_some() {
        cfg.threads = overrides.threads;
    }
    if overrides.checkpoint.is_some() {
        cfg.checkpoint = overrides.checkpoint.clone();
    }
    if let Study::Rates(v) = study {
        if cfg.sweep.variable != v {
            let e = Error::Config(format!("--sweep {} but the config sweeps {}", v.name(), cfg.sweep.variable.name()));
            return (ExitStatus::Usage, Err(e));
        }
    }
    if let Err(e) = cfg.validate() {
        return (ExitStatus::Usage, Err(e));
    }
    match run(study, &cfg, out) {
        Ok(o) => (o.status, Ok(o)),
        Err(e) => (ExitStatus::of_error(&e), Err(e)),
    }
}
