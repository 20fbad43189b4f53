//! `opdlab`: run, ablate, export, and verify on-policy distillation
//! experiments over tabular softmax policies.
//!
//! Exit codes: 0 success, 1 configuration error, 2 runtime abort (non-finite
//! loss or construction failure), 3 verification failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use opdlab_cli::commands;

#[derive(Parser)]
#[command(name = "opdlab", about = "On-policy distillation laboratory over tabular softmax policies", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment file and persist logs, checkpoints, and exports.
    Run {
        /// Path to the experiment file (TOML).
        #[arg(long)]
        config: PathBuf,
        /// Override the output directory.
        #[arg(long)]
        out: Option<String>,
        /// Override the master seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run a family of variants (support ablation or k sweep) with shared seeds.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        /// Ablation kind: `support` or `ksweep`.
        #[arg(long)]
        kind: String,
        #[arg(long)]
        out: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Export a run directory's logs as CSV tables.
    Export {
        /// Run directory containing steps.jsonl.
        run_dir: PathBuf,
        /// Export format.
        #[arg(long, default_value = "csv")]
        format: String,
    },
    /// Run the fast oracle suite (gradient checks, KL oracles, identities).
    Verify,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, out, seed } => commands::cmd_run(&config, out.as_deref(), seed),
        Command::Ablate { config, kind, out, seed } => commands::cmd_ablate(&config, &kind, out.as_deref(), seed),
        Command::Export { run_dir, format } => commands::cmd_export(&run_dir, &format),
        Command::Verify => commands::cmd_verify(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("{err}");
            ExitCode::from(err.exit_code())
        }
    }
}
