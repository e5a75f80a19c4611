//! Scenario files, subcommands and file outputs around `zdasim-core`.

pub mod commands;
pub mod config;
pub mod output;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use commands::CommandError;
use config::ScenarioConfig;

/// Exit code for configuration, IO and numerical errors.
pub const EXIT_ERROR: i32 = 1;

#[derive(Debug, Parser)]
#[command(name = "zdasim", version, about = "Zero-dynamics attacks on switched consensus networks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check every scheduled topology against the defense condition (exit 2 if any fails).
    CheckDefense(Common),
    /// Synthesise attack directions and the pause/resume plan (exit 3 if none exist).
    Synthesize(Common),
    /// Run the nominal and attacked networks and write trajectory and verdict files.
    Simulate(Common),
    /// Report the limit unobservable subspace and detectability.
    Classify(Common),
    /// Run a parameter grid in parallel and write a summary table.
    Sweep(Common),
}

#[derive(Debug, Args)]
pub struct Common {
    /// Scenario file (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory, overriding `output.dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub horizon: Option<f64>,
    #[arg(long)]
    pub threshold: Option<f64>,
}

impl Common {
    pub fn load(&self) -> Result<ScenarioConfig, CommandError> {
        let mut cfg = ScenarioConfig::load(&self.config)?;
        if let Some(out) = &self.out {
            cfg.output.dir = out.clone();
        }
        if let Some(seed) = self.seed {
            cfg.sim.seed = seed;
        }
        if let Some(dt) = self.dt {
            cfg.sim.dt = dt;
        }
        if let Some(h) = self.horizon {
            cfg.sim.horizon = Some(h);
        }
        if let Some(t) = self.threshold {
            cfg.sim.threshold = t;
        }
        Ok(cfg)
    }
}

/// Runs one command, prints its report and returns the exit code.
pub fn run(cli: &Cli) -> i32 {
    let (common, action): (&Common, fn(&ScenarioConfig) -> commands::CmdResult) = match &cli.command {
        Command::CheckDefense(c) => (c, commands::check_defense),
        Command::Synthesize(c) => (c, commands::synthesize),
        Command::Simulate(c) => (c, commands::simulate),
        Command::Classify(c) => (c, commands::classify),
        Command::Sweep(c) => (c, commands::sweep),
    };
    match common.load().and_then(|cfg| action(&cfg)) {
        Ok((report, outcome)) => {
            print!("{}", commands::pretty(&report));
            outcome.exit_code()
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_ERROR
        }
    }
}
