use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use cmlab_core::lab::{run_file, ExitStatus, ExperimentConfig, Overrides, Study, SweepVariable};

#[derive(Parser)]
#[command(name = "cmlab", version, about = "Consistency-model rate studies and property checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON config merged over the study defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (default: runs/<study>).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Sweep {
    N,
    #[value(name = "M")]
    M,
    #[value(name = "T")]
    T,
    Eps,
}

#[derive(Clone, Copy, ValueEnum)]
enum Check {
    Identities,
    Contraction,
    Tails,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Cd,
    Ct,
}

#[derive(Subcommand)]
enum Command {
    /// Sweep one variable and fit the error rate.
    Rates {
        #[arg(long, value_enum)]
        sweep: Sweep,
        /// With --sweep n: W1 between dataset and target, no diffusion.
        #[arg(long)]
        direct: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Numerical property checks of the score, solver and tails.
    Check {
        #[arg(value_enum)]
        what: Check,
        #[command(flatten)]
        common: Common,
    },
    /// Train a consistency network and compare it with the baseline solver.
    Train {
        #[arg(value_enum)]
        mode: Mode,
        #[command(flatten)]
        common: Common,
    },
    /// One-step samples from a checkpoint, or from the baseline solver.
    Sample {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Print the default config of a study (e.g. rates-n, check-tails, train-ct).
    Config { study: String },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { ExitStatus::Usage.code() as u8 } else { 0 });
        }
    };
    match dispatch(cli) {
        Ok(status) => ExitCode::from(status.code() as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(ExitStatus::Usage.code() as u8)
        }
    }
}

fn dispatch(cli: Cli) -> anyhow::Result<ExitStatus> {
    let (study, common, checkpoint) = match cli.command {
        Command::Config { study } => {
            let s = Study::from_name(&study).with_context(|| {
                let names: Vec<String> = Study::all().into_iter().map(|s| s.name()).collect();
                format!("unknown study {study:?}; expected one of {}", names.join(", "))
            })?;
            println!("{}", serde_json::to_string_pretty(&ExperimentConfig::defaults(s))?);
            return Ok(ExitStatus::Pass);
        }
        Command::Rates { sweep, direct, common } => {
            let v = match sweep {
                Sweep::N => SweepVariable::N,
                Sweep::M => SweepVariable::M,
                Sweep::T => SweepVariable::T,
                Sweep::Eps => SweepVariable::Eps,
            };
            let study = match (v, direct) {
                (SweepVariable::N, true) => Study::EmpiricalMeasure,
                (_, true) => anyhow::bail!("--direct applies to --sweep n only"),
                (v, false) => Study::Rates(v),
            };
            (study, common, None)
        }
        Command::Check { what, common } => {
            let study = match what {
                Check::Identities => Study::Identities,
                Check::Contraction => Study::Contraction,
                Check::Tails => Study::Tails,
            };
            (study, common, None)
        }
        Command::Train { mode, common } => {
            (if matches!(mode, Mode::Cd) { Study::TrainCd } else { Study::TrainCt }, common, None)
        }
        Command::Sample { checkpoint, common } => (Study::Sample, common, checkpoint),
    };

    let out = common.out.clone().unwrap_or_else(|| PathBuf::from("runs").join(study.name()));
    let overrides = Overrides { seed: common.seed, threads: common.threads, checkpoint };
    let (status, result) = run_file(study, common.config.as_deref(), &out, &overrides);
    match result {
        Ok(o) => {
            for l in &o.lines {
                println!("{l}");
            }
            let files: Vec<String> = o.files.iter().map(|f| f.display().to_string()).collect();
            println!("{}: {:?}; wrote {}", study.name(), status, files.join(", "));
        }
        Err(e) => eprintln!("error: {e}"),
    }
    Ok(status)
}
