//! Command-line front end for `dcf-netcalc`.

pub mod commands;
pub mod config;
pub mod output;

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use config::{ConfigError, RunConfig, CONFIG_ENV};
use output::Format;

#[derive(Debug, Parser)]
#[command(
    name = "dcf-netcalc",
    version,
    about = "Stochastic network calculus backlog bounds for 802.11 DCF"
)]
pub struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true, env = CONFIG_ENV)]
    pub config: Option<PathBuf>,
    /// Random seed; overrides `run.seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Table)]
    pub format: Format,
    /// Write the report here instead of stdout.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Number of contending nodes; overrides `mac.n_nodes`.
    #[arg(long = "n", global = true)]
    pub n_nodes: Option<u32>,
    /// Payload in bytes; overrides `mac.payload_bytes`.
    #[arg(long, global = true)]
    pub payload: Option<u32>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve the saturated attempt/collision fixed point.
    FixedPoint,
    /// Fit (sigma, rho) of the impairment process over a theta grid.
    Characterize {
        /// Comma-separated thetas; defaults to the log grid of `[grid]`.
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        theta: Option<Vec<f64>>,
    },
    /// Backlog-bound quantile table.
    Bounds {
        #[command(flatten)]
        q: QuantileArgs,
        /// Comma-separated variants (bound1..bound4).
        #[arg(long, value_delimiter = ',')]
        variants: Option<Vec<String>>,
        #[command(flatten)]
        curve: CurveArgs,
    },
    /// Stability verdict and threshold.
    Stability {
        #[arg(long)]
        lambda: Option<f64>,
    },
    /// Run the DCF simulator.
    Simulate {
        /// Poisson arrival rate, packets per slot; overrides `traffic.lambda`.
        #[arg(long)]
        lambda: Option<f64>,
        #[command(flatten)]
        sim: SimArgs,
        /// Dump tagged-node backlog samples here (`replication,time_secs,backlog`).
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Bounds next to the simulated quantiles.
    Compare {
        #[command(flatten)]
        q: QuantileArgs,
        #[command(flatten)]
        sim: SimArgs,
        #[command(flatten)]
        curve: CurveArgs,
    },
}

#[derive(Debug, Clone, Args)]
pub struct QuantileArgs {
    /// Poisson arrival rate, packets per slot; overrides `traffic.lambda`.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Comma-separated tail probabilities.
    #[arg(long = "p", value_delimiter = ',')]
    pub p_list: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Args)]
pub struct SimArgs {
    /// Independent replications; overrides `sim.replications`.
    #[arg(long)]
    pub replications: Option<usize>,
    /// Simulated seconds per replication; overrides `sim.duration_secs`.
    #[arg(long)]
    pub duration: Option<f64>,
    /// Time at which the tagged backlog is sampled; overrides `sim.sample_time_secs`.
    #[arg(long)]
    pub sample_time: Option<f64>,
    /// Simulate saturated nodes instead of Poisson arrivals.
    #[arg(long)]
    pub saturated: bool,
}

#[derive(Debug, Clone, Args)]
pub struct CurveArgs {
    /// Write `x,bound1..bound4,empirical` plot data here.
    #[arg(long)]
    pub curve: Option<PathBuf>,
    /// Last `x` of the curve.
    #[arg(long, default_value_t = 400)]
    pub curve_x_max: u64,
}

/// Config file (if any) with the global flag overrides applied.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.run.seed = seed;
    }
    if let Some(n) = cli.n_nodes {
        cfg.mac.n_nodes = n;
    }
    if let Some(p) = cli.payload {
        cfg.mac.payload_bytes = p;
    }
    Ok(cfg)
}

/// Runs one invocation, writing the report to `--out` or stdout and
/// warnings to stderr.
pub fn run(cli: &Cli) -> Result<()> {
    let cfg = resolve_config(cli)?;
    let report = commands::dispatch(&cli.command, cfg)?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    let text = report.render(cli.format)?;
    match &cli.out {
        Some(path) => std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?,
        None => print!("{text}"),
    }
    Ok(())
}

pub const EXIT_OTHER: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_INFEASIBLE: i32 = 3;
pub const EXIT_NON_CONVERGENCE: i32 = 4;

/// Maps a failure to the documented exit code.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    use dcf_netcalc::Error as E;
    for cause in err.chain() {
        if cause.is::<ConfigError>() || cause.is::<toml::de::Error>() {
            return EXIT_CONFIG;
        }
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::InvalidParameter(_) | E::InvalidRate { .. } | E::EmptyTrace | E::TraceTooShort { .. } => EXIT_CONFIG,
                E::InfeasibleGrid { .. } | E::QuantileCapExceeded { .. } => EXIT_INFEASIBLE,
                E::NonConvergence { .. } => EXIT_NON_CONVERGENCE,
                E::InstanceTooLarge { .. } | E::HorizonExceeded { .. } => EXIT_OTHER,
            };
        }
    }
    EXIT_OTHER
}
