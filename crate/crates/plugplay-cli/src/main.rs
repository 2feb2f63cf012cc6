//! Operator front end for the auto-compensating QKD stack: closed-form
//! sweeps, Monte Carlo transmissions, full key exchanges, gate alignment
//! and reference-grid reproduction, all emitting plot-ready CSV.
//!
//! Every command is deterministic in `(config, seed)`: rerunning with the
//! same inputs produces byte-identical CSV. Summaries and diagnostics go
//! to stderr so the CSV stream stays clean.

mod align;
mod model;
mod output;
mod reproduce;
mod run;
mod simulate;

use std::fs;
use std::path::Path;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use plugplay::config::ExperimentConfig;

/// Tools for the self-compensating fiber QKD link.
#[derive(Parser)]
#[command(name = "plugplay", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Closed-form rates along the detector operating curve
    Model(model::ModelArgs),
    /// Monte Carlo transmission next to its analytic prediction
    Simulate(simulate::SimulateArgs),
    /// Full key exchange, in memory or across a socket
    Run(run::RunArgs),
    /// Two-stage gate delay search on a synthetic reflection trace
    Align(align::AlignArgs),
    /// Recompute a published reference grid and check tolerances
    Reproduce(reproduce::ReproduceArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.command {
        Command::Model(args) => model::run(args),
        Command::Simulate(args) => simulate::run(args),
        Command::Run(args) => run::run(args),
        Command::Align(args) => align::run(args),
        Command::Reproduce(args) => reproduce::run(args),
    };
    match res {
        Ok(code) => code,
        Err(err) => {
            eprintln!("plugplay: error: {err:#}");
            ExitCode::FAILURE
        }
    }
}

/// Loads an experiment description, or the built-in defaults (the 22.8 km
/// installed-cable operating point) when no path is given.
fn load_config(path: Option<&Path>) -> anyhow::Result<ExperimentConfig> {
    match path {
        Some(p) => fs::read_to_string(p)
            .with_context(|| format!("reading {}", p.display()))?
            .parse()
            .with_context(|| format!("parsing {}", p.display())),
        None => Ok(ExperimentConfig::default()),
    }
}
