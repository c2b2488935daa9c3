use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use bpre_cli::commands;
use bpre_cli::config::{Overrides, RunConfig};
use bpre_cli::Failure;
use clap::{Parser, Subcommand};

/// Lower large deviations of branching processes in random environment.
#[derive(Debug, Parser)]
#[command(name = "bpre-ld", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML run configuration.
    #[arg(long, global = true, env = "BPRE_CONFIG")]
    config: Option<PathBuf>,
    #[arg(long, global = true, env = "BPRE_SEED")]
    seed: Option<u64>,
    /// Worker threads; defaults to the number of cores.
    #[arg(long, global = true, env = "BPRE_THREADS")]
    threads: Option<usize>,
    /// Write the table here instead of stdout.
    #[arg(long, global = true, env = "BPRE_OUT")]
    out: Option<PathBuf>,
    /// Number of θ grid points.
    #[arg(long, global = true, env = "BPRE_THETA_GRID")]
    theta_grid: Option<usize>,
    #[arg(long, global = true, env = "BPRE_REPS")]
    reps: Option<u64>,
    /// Particle horizon for `rho`.
    #[arg(long, global = true, env = "BPRE_HORIZON")]
    horizon: Option<u32>,
    #[arg(long, global = true, env = "BPRE_BAND")]
    band: Option<u64>,
    #[arg(long, global = true, env = "BPRE_PARTICLES")]
    particles: Option<usize>,
    /// Population cap for the simulator.
    #[arg(long, global = true, env = "BPRE_CAP")]
    cap: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Tabulate Λ, λ_θ and χ over a θ grid.
    Rate,
    /// Monte Carlo estimates against the theoretical rate.
    Estimate,
    /// Particle estimate of the survival rate ρ.
    Rho,
    /// θ window of the cell-parasite model.
    Kimmel,
    /// Environment hypotheses and regime.
    Diagnose,
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Failure::Config("--config is required".into()))?;
    let mut cfg = RunConfig::load(path)?;
    cfg.apply(&Overrides {
        seed: cli.seed,
        theta_grid: cli.theta_grid,
        reps: cli.reps,
        horizon: cli.horizon,
        band: cli.band,
        particles: cli.particles,
        cap: cli.cap,
    })?;
    if let Some(threads) = cli.threads {
        if threads == 0 {
            return Err(Failure::Config("--threads must be >= 1".into()).into());
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .context("starting the worker pool")?;
    }

    let table = match cli.command {
        Command::Rate => commands::rate_table(&cfg),
        Command::Estimate => commands::estimate_table(&cfg),
        Command::Rho => commands::rho_table(&cfg),
        Command::Kimmel => commands::kimmel_table(&cfg),
        Command::Diagnose => commands::diagnose_table(&cfg),
    }?;
    let text = table.render();
    match &cli.out {
        Some(out) => std::fs::write(out, text)
            .map_err(Failure::Io)
            .with_context(|| format!("writing {}", out.display()))?,
        None => print!("{text}"),
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e.downcast_ref::<Failure>().map_or(1, Failure::exit_code);
            ExitCode::from(code as u8)
        }
    }
}
