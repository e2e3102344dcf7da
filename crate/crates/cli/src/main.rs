use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use uep_cli::output::read_csv_file;
use uep_cli::{compare_frontiers, load_config, run, RunOptions};

#[derive(Parser)]
#[command(name = "uep", version, about = "Train and evaluate unequal error protection codes")]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write its artifacts.
    Run {
        config: PathBuf,
        /// Override the master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the output directory.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Check a configuration without running it.
    Validate { config: PathBuf },
    /// Report dominance between autoencoder and baseline results.
    Compare { ae: PathBuf, baseline: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global() {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    }
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Run { config, seed, out_dir } => {
            let (dir, out) = run(&config, &RunOptions { seed, out_dir })?;
            say(&format!("{} rows written to {}", out.rows.len(), dir.display()))?;
        }
        Command::Validate { config } => {
            let c = load_config(&config)?;
            say(&format!("{}: ok ({})", config.display(), c.mode.name()))?;
        }
        Command::Compare { ae, baseline } => {
            let report = compare_frontiers(&read_csv_file(&ae)?, &read_csv_file(&baseline)?);
            say(&serde_json::to_string_pretty(&report)?)?;
        }
    }
    Ok(())
}

/// Prints a line, treating a closed pipe as success.
fn say(text: &str) -> anyhow::Result<()> {
    match writeln!(std::io::stdout().lock(), "{text}") {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}
