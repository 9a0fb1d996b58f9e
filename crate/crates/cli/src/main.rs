mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand, ValueEnum};
use criot::region::{SweepAxis, SweepTarget};

use crate::config::{resolve, CompareSection, Overrides, RunConfig, SweepSection};

/// Analytic model, simulator and sustainability sweeps for a cognitive-radio
/// IoT access point.
#[derive(Debug, Parser)]
#[command(name = "criot", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, clap::Args)]
struct Common {
    /// JSON run configuration; missing values take the reference defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (default: the config's output_dir, else ".").
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Axis {
    Detection,
    FalseAlarm,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Target {
    BetaC,
    LambdaC,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve the chain and write metrics.csv.
    Analyze {
        #[command(flatten)]
        common: Common,
        /// Also write stationary.csv.
        #[arg(long)]
        stationary: bool,
        /// Also write matrix.csv (non-zero entries).
        #[arg(long)]
        matrix: bool,
        /// One metrics row per rate.
        #[arg(long, value_delimiter = ',')]
        lambdas: Option<Vec<f64>>,
    },
    /// Run the Monte Carlo simulator and write sim.csv.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Critical beta or lambda over a detection or false-alarm grid; writes sweep.csv.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        axis: Option<Axis>,
        #[arg(long, value_enum)]
        target: Option<Target>,
        #[arg(long, value_delimiter = ',')]
        grid: Option<Vec<f64>>,
        /// Bisection tolerance (default 1e-3 for beta_c, 1e-6 for lambda_c).
        #[arg(long)]
        tol: Option<f64>,
    },
    /// Simulated, full-model and synchronized-baseline waits over a rate grid;
    /// writes compare.csv.
    Compare {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',')]
        lambdas: Option<Vec<f64>>,
    },
}

fn load(common: &Common) -> Result<RunConfig> {
    match &common.config {
        Some(path) => RunConfig::load(path),
        None => Ok(RunConfig::default()),
    }
}

fn out_dir(common: &Common, cfg: &RunConfig) -> PathBuf {
    common
        .out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("."))
}

fn run(cli: Cli) -> Result<()> {
    let (common, tables, cfg) = match cli.command {
        Command::Analyze { common, stationary, matrix, lambdas } => {
            let mut cfg = load(&common)?;
            if lambdas.is_some() {
                cfg.analyze.lambdas = lambdas;
            }
            let r = resolve(&cfg, &common.overrides)?;
            let emit = commands::Emit {
                stationary: stationary || cfg.emit.stationary,
                matrix: matrix || cfg.emit.matrix,
            };
            let t = commands::analyze(&cfg, &r, &emit)?;
            (common, t, cfg)
        }
        Command::Simulate { common } => {
            let cfg = load(&common)?;
            let r = resolve(&cfg, &common.overrides)?;
            let t = commands::simulate(&r)?;
            (common, t, cfg)
        }
        Command::Sweep { common, axis, target, grid, tol } => {
            let mut cfg = load(&common)?;
            let base = cfg.sweep.take();
            let axis = axis.map(|a| match a {
                Axis::Detection => SweepAxis::Detection,
                Axis::FalseAlarm => SweepAxis::FalseAlarm,
            });
            let target = target.map(|t| match t {
                Target::BetaC => SweepTarget::BetaC,
                Target::LambdaC => SweepTarget::LambdaC,
            });
            cfg.sweep = match base {
                Some(s) => Some(SweepSection {
                    axis: axis.unwrap_or(s.axis),
                    target: target.unwrap_or(s.target),
                    grid: grid.unwrap_or(s.grid),
                    tol: tol.or(s.tol),
                }),
                None => match (axis, target, grid) {
                    (Some(axis), Some(target), Some(grid)) => Some(SweepSection { axis, target, grid, tol }),
                    _ => None,
                },
            };
            let r = resolve(&cfg, &common.overrides)?;
            let t = commands::sweep_cmd(&cfg, &r)?;
            (common, t, cfg)
        }
        Command::Compare { common, lambdas } => {
            let mut cfg = load(&common)?;
            if let Some(lambdas) = lambdas {
                cfg.compare = Some(CompareSection { lambdas });
            }
            let r = resolve(&cfg, &common.overrides)?;
            let t = commands::compare(&cfg, &r)?;
            (common, t, cfg)
        }
    };
    for path in output::write_all(&out_dir(&common, &cfg), &tables)? {
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
