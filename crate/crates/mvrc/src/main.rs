//! Command-line entry point.
//!
//! Exit codes: 0 on success, 2 on configuration errors, 3 on runtime
//! failures.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mvrc::harness::{run_experiment, summarize_directory, ExperimentConfig, KeyValues};

#[derive(Parser)]
#[command(name = "mvrc", about = "Stochastic composition-optimization benchmark harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every solver in an experiment config and write traces + summary.
    Run { config: PathBuf },
    /// Validate an experiment config without running anything.
    Validate { config: PathBuf },
    /// Rebuild summary.csv from the trace files in a directory.
    Summarize { dir: PathBuf },
}

fn load_config(path: &PathBuf) -> mvrc::Result<ExperimentConfig> {
    let kv = KeyValues::load(path)?;
    ExperimentConfig::from_kv(&kv)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome: mvrc::Result<()> = match &cli.command {
        Command::Run { config } => load_config(config).and_then(|cfg| {
            cfg.validate()?;
            let summary = run_experiment(&cfg)?;
            println!(
                "wrote {} solver traces to {} (common budget {} samples)",
                summary.rows.len(),
                summary.output_dir.display(),
                summary.common_budget
            );
            for row in &summary.rows {
                println!(
                    "  {}: status={} final_grad_mapping={} best_objective={}",
                    row.name, row.status, row.final_grad_mapping, row.best_objective
                );
            }
            Ok(())
        }),
        Command::Validate { config } => load_config(config).and_then(|cfg| {
            cfg.validate()?;
            println!("config ok: {} solvers", cfg.solvers.len());
            Ok(())
        }),
        Command::Summarize { dir } => summarize_directory(dir).map(|summary| {
            println!(
                "summary over {} solvers at common budget {}",
                summary.rows.len(),
                summary.common_budget
            );
            for row in &summary.rows {
                println!(
                    "  {}: status={} final_grad_mapping={} best_objective={}",
                    row.name, row.status, row.final_grad_mapping, row.best_objective
                );
            }
        }),
    };

    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is_config() => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(3)
        }
    }
}
