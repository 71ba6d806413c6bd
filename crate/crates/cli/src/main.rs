//! `polarimeter`: offline tomography, count simulation, Monte Carlo
//! precision studies, the live streaming service and capture replay.

mod chart;
mod montecarlo;
mod serve;
mod simulate;
mod tomo;

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use polarimeter_core::config::Config;

#[derive(Debug, Parser)]
#[command(name = "polarimeter", version, about = "Entangled-photon polarimeter: two-qubit polarization tomography")]
pub struct Cli {
    /// Seed for every random draw (default: the config's `seed`, else 0).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Versioned TOML configuration file.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Output format (default: csv for simulate-counts, json elsewhere).
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Reconstruct a density matrix from a counts file.
    Tomo(tomo::Args),
    /// Simulate one tomography's worth of coincidence counts.
    SimulateCounts(simulate::Args),
    /// Monte Carlo precision curves against ensemble size or total time.
    Montecarlo(montecarlo::Args),
    /// Run the live instrument and stream frames over WebSocket.
    Serve(serve::ServeArgs),
    /// Re-simulate a capture file and compare it frame by frame.
    Replay(serve::ReplayArgs),
}

/// Settings shared by every subcommand.
pub struct Ctx {
    pub config: Config,
    pub seed: u64,
    pub format: Option<Format>,
}

fn load(cli: &Cli) -> Result<Ctx> {
    let config = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            Config::parse(&text).with_context(|| format!("config {}", path.display()))?
        }
        None => Config::default(),
    };
    let seed = cli.seed.or(config.seed).unwrap_or(0);
    Ok(Ctx {
        config,
        seed,
        format: cli.format,
    })
}

/// Writes `text` to `path`, or to stdout when no path is given.
pub fn emit(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())?;
            out.flush()?;
            Ok(())
        }
    }
}

pub fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = load(&cli).and_then(|ctx| match cli.command {
        Cmd::Tomo(args) => tomo::run(&ctx, args),
        Cmd::SimulateCounts(args) => simulate::run(&ctx, args),
        Cmd::Montecarlo(args) => montecarlo::run(&ctx, args),
        Cmd::Serve(args) => serve::serve(&ctx, args),
        Cmd::Replay(args) => serve::replay(&ctx, args),
    });
    if let Err(e) = result {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
