mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Rate-bounded feedback synthesis, simulation and verification.
#[derive(Debug, Parser)]
#[command(name = "ratebound", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args, Clone, Default)]
pub struct Common {
    /// Problem configuration (TOML).
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Output directory; the TOOLKIT_OUT environment variable takes precedence.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Seed for random initial conditions.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub tmax: Option<f64>,
    /// Convergence radius.
    #[arg(long)]
    pub eps: Option<f64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build a controller from a configuration; writes controller.toml and synthesis.log.
    Synthesize {
        #[command(flatten)]
        common: Common,
    },
    /// Simulate the closed loop from every configured initial condition.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Controller file; synthesized from the configuration when omitted.
        #[arg(long, value_name = "PATH")]
        controller: Option<PathBuf>,
    },
    /// Check bounds and convergence of recorded trajectories.
    Verify {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "PATH")]
        controller: PathBuf,
        /// Comma-separated limits on |U^(j)|, j = 0, 1, ...
        #[arg(long, value_delimiter = ',')]
        limits: Option<Vec<f64>>,
        #[arg(required = true, value_name = "CSV")]
        trajectories: Vec<PathBuf>,
    },
    /// Run a published example end to end and write plot data.
    Reproduce {
        #[command(flatten)]
        common: Common,
        #[arg(value_enum)]
        example: Example,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Example {
    TripleIntegrator,
    HarmonicOscillator,
    Counterexamples,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synthesize { common } => commands::synthesize(&common),
        Command::Simulate { common, controller } => commands::simulate(&common, controller.as_deref()),
        Command::Verify { common, controller, limits, trajectories } => {
            commands::verify(&common, &controller, limits, &trajectories)
        }
        Command::Reproduce { common, example } => commands::reproduce(&common, example),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code())
        }
    }
}
