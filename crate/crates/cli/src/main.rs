use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use damp_core::harness::{self, output, ExperimentConfig};

#[derive(Parser)]
#[command(name = "damp", version, about = "Distributed AMP activity detection experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a Monte-Carlo experiment and write llr.csv, roc.csv, timing.csv and manifest.json.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Override the trial count.
        #[arg(long)]
        trials: Option<usize>,
        /// Override the master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the worker count.
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Run invariant suites and print a JSON report.
    Verify {
        /// Suite name, or `all`.
        #[arg(long)]
        suite: String,
    },
    /// Measure per-trial wall time on a single worker and write timing.csv.
    Timing {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; defaults to the config's output_dir or the current directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    ExperimentConfig::from_json(&text).with_context(|| format!("parsing {}", path.display()))
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Run { config, out, trials, seed, workers } => {
            let mut cfg = load_config(&config)?;
            if let Some(t) = trials {
                cfg.trials = t;
            }
            if let Some(s) = seed {
                cfg.network.rng_seed = s;
            }
            if let Some(w) = workers {
                cfg.workers = w;
            }
            cfg.output_dir = Some(out.clone());
            cfg.validate()?;
            let summary = harness::run_experiment(&cfg, &out)?;
            eprintln!(
                "{} of {} trials completed; results in {}",
                summary.trials_completed,
                summary.trials_requested,
                out.display()
            );
            for f in &summary.failures {
                eprintln!("trial {} failed: {}", f.trial, f.error);
            }
            Ok(if summary.failed() { ExitCode::FAILURE } else { ExitCode::SUCCESS })
        }
        Command::Verify { suite } => {
            let report = harness::run_property_suite(&suite)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(if report.passed { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
        Command::Timing { config, out } => {
            let cfg = load_config(&config)?;
            let dir = out.or_else(|| cfg.output_dir.clone()).unwrap_or_else(|| PathBuf::from("."));
            std::fs::create_dir_all(&dir)?;
            let rows = harness::measure_runtime(&cfg)?;
            let path = dir.join(output::TIMING_FILE);
            output::write_timing(&path, &rows)?;
            println!("scheme,dcc,L,mean_seconds");
            for (scheme, dcc, l, mean) in output::mean_timings(&rows) {
                println!("{scheme},{dcc},{l},{mean:.6}");
            }
            eprintln!("per-trial timings in {}", path.display());
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
