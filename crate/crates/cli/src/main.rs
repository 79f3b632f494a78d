//! `wgimage` command-line driver.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::{ConfigError, RunConfig};

#[derive(Parser, Debug)]
#[command(
    name = "wgimage",
    version,
    about = "Correlation-based imaging in random waveguides"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed; overrides the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (0 uses all cores).
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory; overrides `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Modal wavenumbers and group slownesses at the carrier.
    Modes(Common),
    /// Coupled-power curves, equipartition distance and Monte Carlo moments.
    Moments(Common),
    /// Images of one realization together with the expected images.
    Image(Common),
    /// Tabulated cross-range and range point-spread functions.
    Psf(Common),
    /// Ensemble statistics of the imaging functionals.
    Ensemble(Common),
    /// Runs the acceptance suite and reports one record per criterion.
    Validate(Common),
}

/// Process exit status.
pub enum Failure {
    Validation(String),
    Config(String),
    Runtime(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Validation(_) => 1,
            Failure::Config(_) => 2,
            Failure::Runtime(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Validation(m) | Failure::Config(m) | Failure::Runtime(m) => m,
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

impl From<wgimage::Error> for Failure {
    fn from(e: wgimage::Error) -> Self {
        use wgimage::Error as E;
        match e {
            E::InvalidParameter { .. }
            | E::NoPropagatingModes { .. }
            | E::EvanescentMode { .. }
            | E::CutoffMode { .. }
            | E::OutOfRange { .. }
            | E::Resolution(_)
            | E::Stability { .. }
            | E::NoEquipartition
            | E::UnsupportedModel(_)
            | E::Regime(_)
            | E::Config { .. } => Failure::Config(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

fn load(common: &Common) -> Result<RunConfig, Failure> {
    let path = common
        .config
        .as_ref()
        .ok_or_else(|| Failure::Config("this command needs --config".into()))?;
    let mut cfg = RunConfig::load(path)?;
    if let Some(seed) = common.seed {
        cfg.ensemble.seed = seed;
        if let Some(v) = cfg.validation.as_mut() {
            v.reseed(seed);
        }
    }
    if let Some(w) = common.workers {
        cfg.ensemble.workers = w;
    }
    if let Some(out) = &common.out {
        cfg.output_dir = out.clone();
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Modes(c) => commands::modes(&load(&c)?),
        Command::Moments(c) => commands::moments(&load(&c)?),
        Command::Image(c) => commands::image(&load(&c)?),
        Command::Psf(c) => {
            let cfg = match &c.config {
                Some(_) => Some(load(&c)?),
                None => None,
            };
            commands::psf(cfg.as_ref(), c.out.as_deref())
        }
        Command::Ensemble(c) => commands::ensemble(&load(&c)?),
        Command::Validate(c) => commands::validate(&load(&c)?),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
