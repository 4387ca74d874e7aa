//! Command-line orchestration for diffusion HMM experiments: configuration
//! ingestion, the `validate` / `run` / `sweep` / `analyze` commands and
//! deterministic CSV and JSON output.

pub mod commands;
pub mod config;
pub mod error;
pub mod format;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::ConfigFile;
pub use error::{CliError, EXIT_OK, EXIT_PARTIAL, EXIT_RUNTIME, EXIT_VALIDATION};

#[derive(Debug, Parser)]
#[command(name = "dhmm", version, about = "Social learning over networks in changing environments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check the network, identifiability and likelihood-ratio assumptions.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Simulate every configured strategy on shared observations.
    Run(Common),
    /// Evaluate the Cartesian product of strategies, noise levels and alpha values.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Worker threads; affects wall time only.
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Fixed points, margins, contraction and error bounds for a fixed true state.
    Analyze(Common),
}

#[derive(Debug, Args)]
pub struct Common {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides `run.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Runs one command, printing progress to stdout. Returns the exit code.
pub fn execute(cli: Cli) -> Result<i32, CliError> {
    match cli.command {
        Command::Validate { config } => {
            let cfg = ConfigFile::load(&config)?;
            let report = commands::validate(&cfg)?;
            print!("{}", report.render());
            Ok(if report.passed { EXIT_OK } else { EXIT_VALIDATION })
        }
        Command::Run(c) => {
            let cfg = ConfigFile::load(&c.config)?.with_seed(c.seed);
            let out = commands::run(&cfg, &c.out)?;
            for f in &out.files {
                println!("wrote {}", f.display());
            }
            Ok(EXIT_OK)
        }
        Command::Sweep { common: c, threads } => {
            let cfg = ConfigFile::load(&c.config)?.with_seed(c.seed);
            let out = commands::sweep(&cfg, &c.out, threads)?;
            for f in &out.files {
                println!("wrote {}", f.display());
            }
            if out.failed > 0 {
                println!("{} of {} cells failed; see failures.csv", out.failed, out.cells);
                Ok(EXIT_PARTIAL)
            } else {
                Ok(EXIT_OK)
            }
        }
        Command::Analyze(c) => {
            let cfg = ConfigFile::load(&c.config)?.with_seed(c.seed);
            let (_, files) = commands::analyze(&cfg, &c.out)?;
            for f in &files {
                println!("wrote {}", f.display());
            }
            Ok(EXIT_OK)
        }
    }
}
