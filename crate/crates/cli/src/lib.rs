//! Batch pipeline: config files, catalog caching and CSV artifacts for the
//! donor Rydberg gate workflow.

pub mod commands;
pub mod config;
pub mod error;
pub mod fidmap;
pub mod output;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::commands::Context;
use crate::config::RunConfig;
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "sirydberg", version, about = "Donor Rydberg gate simulations")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// TOML run config; defaults apply to anything omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory, overriding run.output_dir.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Integrator tolerance, overriding run.tol.
    #[arg(long, global = true)]
    pub tol: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Build or reuse the eigenstate catalog.
    Solve,
    /// Interaction channels along axes and on a raster.
    Interactions,
    /// Perturbative (and optionally direct) Stark shifts.
    Stark,
    /// Tunnel ionization and the largest safe field.
    Ionize,
    /// Optimal gate parameters over a u/γ grid.
    Optimize,
    /// Rabi and detuning robustness scans.
    Scan,
    /// Fidelity over donor placements with fixed pulses.
    FidelityMap {
        /// Re-optimize the pulses in every cell.
        #[arg(long)]
        reoptimize_per_cell: bool,
        /// Evaluate interactions at every point instead of interpolating.
        #[arg(long)]
        direct_cells: bool,
    },
    /// Self-checks of solver, master equation and gate phases.
    Validate,
}

impl Cli {
    /// Config file plus command-line overrides, validated.
    pub fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(o) = &self.out {
            cfg.run.output_dir = o.clone();
        }
        if let Some(s) = self.seed {
            cfg.run.seed = s;
        }
        if let Some(t) = self.tol {
            cfg.run.tol = t;
        }
        if let Command::FidelityMap { reoptimize_per_cell, direct_cells } = self.command {
            cfg.map.reoptimize_per_cell |= reoptimize_per_cell;
            cfg.map.direct_cells |= direct_cells;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    let ctx = Context::new(cli.resolve()?);
    match cli.command {
        Command::Solve => commands::solve(&ctx),
        Command::Interactions => commands::interactions(&ctx),
        Command::Stark => commands::stark(&ctx),
        Command::Ionize => commands::ionize(&ctx),
        Command::Optimize => commands::optimize_cmd(&ctx),
        Command::Scan => commands::scan(&ctx),
        Command::FidelityMap { .. } => commands::fidelity_map(&ctx),
        Command::Validate => commands::validate(&ctx),
    }
}
