use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use covmorse::harness::{self, ExperimentConfig, RunOptions};
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "covmorse", version, about = "Holomorphic Morse inequality experiments on covering tori")]
struct Cli {
    /// Worker threads for the data-parallel stages
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Override the seed from the config
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (defaults to output.dir from the config, then out/<name>)
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment config and write report.json and the CSV tables
    Run { config: PathBuf },
    /// Rebuild convergence.csv from report.json and print it
    Table { report_dir: PathBuf },
    /// Re-derive every verdict from the CSV columns
    Check { report_dir: PathBuf },
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config } => {
            let (cfg, text) = ExperimentConfig::load(&config).with_context(|| format!("loading {}", config.display()))?;
            let opts = RunOptions {
                workers: cli.workers,
                seed: cli.seed,
                out: cli.out,
            };
            let report = harness::run_experiment(&cfg, &text, &opts)?;
            harness::summarize(&report, std::io::stdout().lock())?;
        }
        Command::Table { report_dir } => {
            print!("{}", harness::table(&report_dir)?);
        }
        Command::Check { report_dir } => {
            let s = harness::check(&report_dir)?;
            println!(
                "sandwich rows {} (uncertified {}), violations {}; convergence rows {}, weak failures {}",
                s.sandwich_rows, s.uncertified_rows, s.sandwich_violations, s.convergence_rows, s.weak_failures
            );
            for msg in &s.inconsistencies {
                println!("inconsistent: {msg}");
            }
            if !s.ok() {
                bail!("check failed");
            }
        }
    }
    Ok(())
}
