use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use ptycho_cli::commands::{cmd_benchmark, cmd_phantom, cmd_reconstruct, cmd_simulate, print_summary};
use ptycho_cli::config::{self, ConfigFile, Overrides};

/// Ptychographic phase retrieval: simulate data and compare solvers.
#[derive(Parser)]
#[command(name = "ptycho", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the phantom as a dump and magnitude/phase PGMs.
    Phantom(Common),
    /// Simulate a dataset (amplitudes, scan, truth, probe, manifest).
    Simulate(Common),
    /// Run each configured solver and write logs, estimates and a summary.
    Reconstruct(Common),
    /// Reconstruct, then merge the per-solver logs into one table.
    Benchmark {
        #[command(flatten)]
        common: Common,
        /// Only merge logs already in the output directory.
        #[arg(long)]
        merge_only: bool,
    },
}

#[derive(Args)]
struct Common {
    /// TOML experiment file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Fixed-order reductions, for bit-identical reruns.
    #[arg(long)]
    deterministic: bool,
    /// Iterations for every solver.
    #[arg(long)]
    iters: Option<usize>,
}

impl Common {
    fn resolve(&self) -> Result<config::ExperimentConfig> {
        let file = match &self.config {
            Some(path) => config::load(path)?,
            None => ConfigFile::default(),
        };
        file.resolve(&Overrides {
            out: self.out.clone(),
            seed: self.seed,
            deterministic: self.deterministic,
            iterations: self.iters,
        })
    }
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Phantom(c) => cmd_phantom(&c.resolve()?),
        Command::Simulate(c) => {
            let cfg = c.resolve()?;
            let data = cmd_simulate(&cfg)?;
            println!(
                "wrote {} patterns of {}x{} to {}",
                data.amplitudes.count(),
                data.amplitudes.frame(),
                data.amplitudes.frame(),
                cfg.out.display()
            );
            Ok(())
        }
        Command::Reconstruct(c) => {
            print_summary(&cmd_reconstruct(&c.resolve()?)?);
            Ok(())
        }
        Command::Benchmark { common, merge_only } => {
            let cfg = common.resolve()?;
            let rows = cmd_benchmark(&cfg, merge_only)?;
            if !rows.is_empty() {
                print_summary(&rows);
            }
            println!("wrote {}", cfg.out.join("benchmark.csv").display());
            Ok(())
        }
    }
}
