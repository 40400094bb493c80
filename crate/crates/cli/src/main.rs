use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use conmu::harness::{load_report, run_experiment_with, run_sweep_with, ExperimentConfig, SweepSpec};
use conmu::Execution;

/// Controllable machine unlearning benchmark.
#[derive(Debug, Parser)]
#[command(name = "conmu", version)]
struct Cli {
    /// Run trials and sweep points one after another.
    #[arg(long, global = true)]
    sequential: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run every configured method over all trials.
    Run {
        config: PathBuf,
        /// Results JSON; a per-run CSV is written beside it.
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Run ConMU across the values of one knob.
    Sweep {
        spec: PathBuf,
        /// Results JSON; the summary CSV is written beside it.
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Render a results file as a comparison table.
    Report {
        results: PathBuf,
        /// Also write the table as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

fn default_out(input: &Path, suffix: &str) -> PathBuf {
    let stem = input.file_stem().and_then(|s| s.to_str()).unwrap_or("conmu");
    input.with_file_name(format!("{stem}.{suffix}.json"))
}

fn run(cli: Cli) -> Result<()> {
    let exec = if cli.sequential {
        Execution::Sequential
    } else {
        Execution::Auto
    };
    match cli.command {
        Command::Run { config, out } => {
            let cfg =
                ExperimentConfig::from_file(&config).with_context(|| format!("loading config {}", config.display()))?;
            let results = run_experiment_with(&cfg, exec)?;
            let out = out.unwrap_or_else(|| default_out(&config, "results"));
            results
                .save(&out)
                .with_context(|| format!("writing {}", out.display()))?;
            log::info!("wrote {} runs", results.runs.len());
            print!("{}", conmu::harness::build_report(&results)?.render());
            println!("results: {}", out.display());
        }
        Command::Sweep { spec, out } => {
            let sweep = SweepSpec::from_file(&spec).with_context(|| format!("loading sweep {}", spec.display()))?;
            let results = run_sweep_with(&sweep, exec)?;
            let out = out.unwrap_or_else(|| default_out(&spec, "sweep"));
            results
                .save(&out)
                .with_context(|| format!("writing {}", out.display()))?;
            print!("{}", results.to_csv());
            println!("results: {}", out.display());
        }
        Command::Report { results, csv } => {
            let table = load_report(&results).with_context(|| format!("reading {}", results.display()))?;
            print!("{}", table.render());
            if let Some(path) = csv {
                std::fs::write(&path, table.to_csv()?).with_context(|| format!("writing {}", path.display()))?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
