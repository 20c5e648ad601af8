use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use hiercoord_cli::{format_summary, run, Experiment, Scenario};

/// Coordinate coupled subsystems by fixed-point iteration and run the
/// convergence experiments.
#[derive(Parser)]
#[command(name = "hiercoord", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Spectral radius and convergence of scalar mixing over a grid of beta.
    BetaSweep(Common),
    /// Anderson acceleration iterations over a grid of memory lengths.
    MemorySweep(Common),
    /// Residual traces of the designed filter, Anderson and plain iteration.
    Race(Common),
    /// Receding-horizon set-point tracking with the joint coordinator.
    ClosedLoop(Common),
}

#[derive(Args)]
struct Common {
    /// Scenario file; defaults to the synthesized benchmark.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed of the synthesized benchmark (overrides the scenario).
    #[arg(long)]
    seed: Option<u64>,
    /// CSV output path; the CSV goes to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Evaluation budget of the fixed-point solves.
    #[arg(long)]
    sigma_max: Option<usize>,
    /// Residual tolerance of the fixed-point solves.
    #[arg(long)]
    eps_max: Option<f64>,
}

fn execute(experiment: Experiment, args: Common) -> Result<()> {
    let mut scenario = match &args.config {
        Some(path) => Scenario::load(path)?,
        None => Scenario::default(),
    };
    if let Some(seed) = args.seed {
        scenario.seed = seed;
    }
    if args.sigma_max.is_some() {
        scenario.solver.sigma_max = args.sigma_max;
    }
    if args.eps_max.is_some() {
        scenario.solver.eps_max = args.eps_max;
    }
    let (csv, summary) = run(experiment, &scenario)?;
    let table = format_summary(experiment.name(), &summary);
    match &args.out {
        Some(path) => {
            std::fs::write(path, csv).with_context(|| format!("{}: cannot write", path.display()))?;
            print!("{table}");
            println!("  csv  {}", path.display());
        }
        None => {
            print!("{csv}");
            eprint!("{table}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (experiment, args) = match cli.command {
        Command::BetaSweep(a) => (Experiment::BetaSweep, a),
        Command::MemorySweep(a) => (Experiment::MemorySweep, a),
        Command::Race(a) => (Experiment::Race, a),
        Command::ClosedLoop(a) => (Experiment::ClosedLoop, a),
    };
    match execute(experiment, args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
