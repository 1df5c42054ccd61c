use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use wpbc_cli::{execute, load_any, reproduce_figures, with_workers, CliError, FigureSettings};

#[derive(Parser)]
#[command(name = "wpbc", version, about = "Simulate and analyze wirelessly powered backscatter networks")]
struct Cli {
    /// Override the Monte Carlo seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the number of Monte Carlo trials.
    #[arg(long, global = true)]
    trials: Option<u64>,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment file (TOML) or re-run a manifest (JSON).
    Run {
        spec: PathBuf,
        /// Write the CSV here instead of the configured output path.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Write the four reference parameter-study CSVs into a directory.
    ReproduceFigures {
        out_dir: PathBuf,
        /// Simulation window radius in meters.
        #[arg(long)]
        window_radius: Option<f64>,
    },
}

fn run(cli: Cli) -> Result<serde_json::Value, CliError> {
    match cli.command {
        Command::Run { spec, output } => {
            let mut spec = load_any(&spec)?;
            if let Some(seed) = cli.seed {
                spec.seed = seed;
            }
            if let Some(trials) = cli.trials {
                spec.trials = trials;
            }
            if let Some(out) = output {
                spec.output = out;
            }
            let summary = with_workers(cli.workers, || execute(&spec))??;
            Ok(json!({ "csv": summary.csv, "manifest": summary.manifest, "rows": summary.rows }))
        }
        Command::ReproduceFigures { out_dir, window_radius } => {
            let mut settings = FigureSettings::default();
            if let Some(seed) = cli.seed {
                settings.seed = seed;
            }
            if let Some(trials) = cli.trials {
                settings.trials = trials;
            }
            if let Some(r) = window_radius {
                settings.window_radius = r;
            }
            let runs = with_workers(cli.workers, || reproduce_figures(&out_dir, settings))??;
            let csvs: Vec<_> = runs.iter().map(|r| &r.csv).collect();
            Ok(json!({ "csv": csvs }))
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.record());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
