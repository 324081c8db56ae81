//! `clfsynth`: check standing assumptions, synthesize a strict Lyapunov
//! function and a small damping feedback, verify the integral disturbance
//! gain, simulate the closed loop, and flatten artifacts into plot data.

mod commands;
mod config;

use clap::{Parser, Subcommand};
use commands::Outcome;
use config::RunConfig;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "clfsynth", version, about)]
struct Cli {
    /// JSON run configuration (single source of truth for a run).
    #[arg(long, global = true, default_value = "run.json")]
    config: PathBuf,
    /// Override the seed from the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the feedback norm cap.
    #[arg(long, global = true)]
    epsilon: Option<f64>,
    /// Override the certified region radius.
    #[arg(long, global = true)]
    region_radius: Option<f64>,
    /// Override the simulation horizon.
    #[arg(long, global = true)]
    t_end: Option<f64>,
    /// Override the output directory.
    #[arg(long, global = true)]
    output_dir: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check the standing assumptions and write one certificate each.
    Check,
    /// Run the constructive pipeline and write the synthesis certificate.
    Synthesize {
        /// Proceed even when the assumption checks fail.
        #[arg(long)]
        force: bool,
    },
    /// Simulate the closed loop and write trajectory.csv + summary.json.
    Simulate {
        #[arg(long)]
        force: bool,
    },
    /// Synthesize plus the integral disturbance-gain construction.
    Iiss {
        #[arg(long)]
        force: bool,
    },
    /// Emit two-column .dat files from previously written artifacts.
    Report,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Usage problems are operational errors under the exit-status
            // contract (clap would exit 2 on its own).
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    let mut cfg = match RunConfig::load(&cli.config) {
        Ok(cfg) => cfg,
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::from(1);
        }
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(eps) = cli.epsilon {
        cfg.epsilon = eps;
    }
    if let Some(r) = cli.region_radius {
        cfg.region_radius = r;
    }
    if let Some(t) = cli.t_end {
        cfg.t_end = t;
    }
    if let Some(dir) = cli.output_dir {
        cfg.output_dir = dir;
    }

    let outcome = match cli.command {
        Command::Check => commands::cmd_check(&cfg),
        Command::Synthesize { force } => commands::cmd_synthesize(&cfg, force),
        Command::Simulate { force } => commands::cmd_simulate(&cfg, force),
        Command::Iiss { force } => commands::cmd_iiss(&cfg, force),
        Command::Report => commands::cmd_report(&cfg),
    };
    match outcome {
        Ok(Outcome::AllPass) => ExitCode::from(0),
        Ok(Outcome::VerdictFailed(msg)) => {
            eprintln!("verdict failure: {msg}");
            ExitCode::from(2)
        }
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
