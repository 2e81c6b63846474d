//! Command line front end: `dmlab <command> --scenario <file> --out <dir>`.

pub mod commands;
pub mod scenario;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Parser, Subcommand};

use crate::commands::FileSet;
use crate::scenario::{PolicySpec, Scenario};

#[derive(Debug, Parser)]
#[command(name = "dmlab", version, about = "Space-time coded leaky-wave antenna directional-modulation lab")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, clap::Args)]
pub struct Common {
    /// Scenario JSON file, or a manifest written by an earlier run.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Overrides the scenario's master seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// `baseline` or `learned:<model-path>`.
    #[arg(long)]
    pub policy: Option<String>,
    /// In `solve`, also enumerate every schedule and report agreement (small instances).
    #[arg(long)]
    pub exhaustive: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Harmonic radiation patterns, one table per harmonic index.
    Pattern(Common),
    /// Branch-and-bound schedule design.
    Solve(Common),
    /// Bit-error-rate sweeps over angle or Eb/N0.
    Ber(Common),
    /// Trains a pruning policy and compares node counts on held-out instances.
    TrainPruner(Common),
    /// Checks a schedule against the directional-modulation conditions.
    Verify(Common),
}

impl Common {
    pub fn load(&self) -> Result<Scenario> {
        let mut sc = match &self.scenario {
            Some(p) => Scenario::load(p)?,
            None => Scenario::default(),
        };
        if let Some(seed) = self.seed {
            sc.seed = seed;
        }
        if self.exhaustive {
            sc.solver.exhaustive = true;
        }
        if let Some(p) = &self.policy {
            sc.solver.policy = PolicySpec::parse(p)?;
        }
        Ok(sc)
    }
}

/// Runs one command and returns its outputs without writing them.
pub fn execute(command: &Command) -> Result<(FileSet, PathBuf)> {
    let (common, files) = match command {
        Command::Pattern(c) => (c, commands::cmd_pattern(c.load()?)?),
        Command::Solve(c) => (c, commands::cmd_solve(c.load()?)?),
        Command::Ber(c) => (c, commands::cmd_ber(c.load()?)?),
        Command::TrainPruner(c) => (c, commands::cmd_train_pruner(c.load()?)?),
        Command::Verify(c) => (c, commands::cmd_verify(c.load()?)?),
    };
    Ok((files, common.out.clone()))
}

pub fn run(cli: Cli) -> Result<()> {
    let (files, out) = execute(&cli.command)?;
    files.write_to(&out)?;
    for (name, _) in &files.files {
        println!("{}", out.join(name).display());
    }
    Ok(())
}
