//! `polar-fading`: experiments for polar codes and polar lattices over fading channels.

mod cache;
mod commands;
mod config;
mod output;
mod reproduce;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use cache::{Cache, CACHE_ENV};
use config::{ConfigError, ExperimentConfig, Overrides};
use output::Output;
use reproduce::Figure;

#[derive(Debug, Parser)]
#[command(name = "polar-fading", version, about, propagate_version = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    overrides: Overrides,
    /// Directory caching quantized channels and constructions.
    #[arg(long, global = true, env = CACHE_ENV)]
    cache_dir: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Capacity of the configured channel.
    Capacity,
    /// Quantize the channel to a finite BMSC.
    Quantize,
    /// Construct polar codes for every (m, target).
    Construct,
    /// Monte Carlo SC decoding over the fading link.
    Simulate,
    /// Build polar lattices and report the VNR decomposition.
    LatticeBuild,
    /// Simulate multistage lattice decoding.
    LatticeSim,
    /// Union bounds of Gaussian-shaped polar lattices.
    ShapedBound {
        /// Frames per code for the shaping distribution test (0 skips it).
        #[arg(long, default_value_t = 0)]
        power_frames: u64,
    },
    /// Regenerate a figure's CSV bundle.
    Reproduce {
        #[arg(value_enum)]
        figure: Figure,
        /// Include the long-running block lengths (up to 2^20).
        #[arg(long)]
        full: bool,
    },
}

impl Command {
    fn name(&self) -> String {
        match self {
            Command::Capacity => "capacity".into(),
            Command::Quantize => "quantize".into(),
            Command::Construct => "construct".into(),
            Command::Simulate => "simulate".into(),
            Command::LatticeBuild => "lattice-build".into(),
            Command::LatticeSim => "lattice-sim".into(),
            Command::ShapedBound { .. } => "shaped-bound".into(),
            Command::Reproduce { figure, .. } => format!("reproduce {}", serde_json::to_value(figure).unwrap().as_str().unwrap()),
        }
    }
}

/// Failure classes and their exit codes.
#[derive(Debug)]
pub enum RunError {
    /// Bad configuration or I/O; exit code 1.
    Config(String),
    /// Numerical or construction failure; exit code 2.
    Numerical(polar_fading::Error),
}

impl From<ConfigError> for RunError {
    fn from(e: ConfigError) -> Self {
        RunError::Config(e.0)
    }
}

impl From<polar_fading::Error> for RunError {
    fn from(e: polar_fading::Error) -> Self {
        use polar_fading::Error as E;
        match e {
            // invalid parameters that slipped past config validation
            E::Domain(_) | E::Contract(_) | E::Design(_) | E::Artifact(_) => RunError::Config(e.to_string()),
            E::Numerical { .. } | E::Resource { .. } | E::Build(_) => RunError::Numerical(e),
        }
    }
}

impl RunError {
    fn exit_code(&self) -> u8 {
        match self {
            RunError::Config(_) => 1,
            RunError::Numerical(_) => 2,
        }
    }
}

impl std::fmt::Display for RunError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RunError::Config(m) => write!(f, "configuration error: {m}"),
            RunError::Numerical(e) => write!(f, "numerical failure: {e}"),
        }
    }
}

fn run(cli: Cli) -> Result<(), RunError> {
    let cache = Cache::new(cli.cache_dir.clone());
    let name = cli.command.name();
    let cfg = match &cli.command {
        Command::Reproduce { figure, full } => {
            if cli.overrides.config.is_some() {
                return Err(RunError::Config("reproduce takes flags only; --config is not accepted".into()));
            }
            let mut c = reproduce::figure_defaults(*figure, *full);
            c.apply(&cli.overrides, *figure == Figure::Fig9);
            if c.output.is_none() {
                c.output = Some(PathBuf::from("results").join(serde_json::to_value(figure).unwrap().as_str().unwrap()));
            }
            c.validate()?;
            c
        }
        Command::ShapedBound { .. } => ExperimentConfig::resolve(&cli.overrides, true)?,
        _ => ExperimentConfig::resolve(&cli.overrides, false)?,
    };
    let mut out = Output::new(cfg.output.clone())?;
    match &cli.command {
        Command::Capacity => commands::capacity(&cfg, &mut out)?,
        Command::Quantize => commands::quantize(&cfg, &cache, &mut out)?,
        Command::Construct => commands::construct(&cfg, &cache, &mut out)?,
        Command::Simulate => commands::simulate(&cfg, &cache, &mut out)?,
        Command::LatticeBuild => commands::lattice_build(&cfg, &cache, &mut out)?,
        Command::LatticeSim => commands::lattice_sim(&cfg, &cache, &mut out)?,
        Command::ShapedBound { power_frames } => commands::shaped_bound(&cfg, &cache, *power_frames, &mut out)?,
        Command::Reproduce { figure, full } => reproduce::run(*figure, *full, &cfg, &cache, &mut out)?,
    }
    out.finish(&name, &cfg, &cache)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("polar-fading: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
