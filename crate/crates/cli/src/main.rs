//! `regime-hjm`: build, simulate, verify and export regime-switching forward curve models.
//!
//! Exit codes: 0 success, 1 I/O or other failure, 2 invalid input,
//! 3 numerical failure, 4 verification failed.

mod commands;
mod error;
mod manifest;
mod table;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::commands::Action;
use crate::error::{CliError, CliResult};
use crate::manifest::{Invocation, Overrides};

#[derive(Debug, Parser)]
#[command(name = "regime-hjm", version, about)]
struct Cli {
    /// Model configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (default: current directory; for replay, `replay/` next to the manifest).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides sim.seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides sim.n_paths and verify.mc_paths.
    #[arg(long, global = true)]
    paths: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    #[command(flatten)]
    Model(Action),
    /// Rerun a command from its manifest and check that outputs are byte-identical.
    Replay {
        #[arg(long)]
        manifest: PathBuf,
    },
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Model(action) => {
            let path = cli.config.ok_or_else(|| CliError::Invalid("--config is required".into()))?;
            let config_text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
            let inv = Invocation {
                action,
                config_path: Some(path.display().to_string()),
                config_text,
                overrides: Overrides { seed: cli.seed, paths: cli.paths },
                out: cli.out.unwrap_or_else(|| PathBuf::from(".")),
            };
            let (m, failure) = manifest::execute(&inv)?;
            for f in &m.outputs {
                eprintln!("wrote {}", inv.out.join(&f.file).display());
            }
            failure.map_or(Ok(()), Err)
        }
        Command::Replay { manifest: path } => {
            if cli.config.is_some() || cli.seed.is_some() || cli.paths.is_some() {
                return Err(CliError::Invalid("replay takes config, seed and paths from the manifest".into()));
            }
            let recorded = manifest::load(&path)?;
            let out = cli.out.unwrap_or_else(|| path.parent().unwrap_or(std::path::Path::new(".")).join("replay"));
            for line in manifest::replay(&recorded, &out)? {
                println!("{line}");
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
