//! `ckf`: feasibility checks, encoder design, simulation and the conjecture
//! sweep from the command line.
//!
//! Exit codes: 0 on success, 2 when the scenario is infeasible or not
//! stabilizable, 1 on any other error.

mod commands;
mod output;
mod scenario;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use commands::SimulateArgs;
use output::Envelope;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Io(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("{0} exists; pass --force to overwrite")]
    Exists(String),
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error(transparent)]
    Core(#[from] ckf_core::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Infeasible(_)
            | CliError::Core(ckf_core::Error::InfeasiblePartition(_) | ckf_core::Error::NotStabilizable(_)) => 2,
            _ => 1,
        }
    }
}

#[derive(Parser)]
#[command(name = "ckf", version, about = "Coded Kalman filter toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Scenario JSON file.
    #[arg(long)]
    scenario: PathBuf,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overwrite existing output files.
    #[arg(long)]
    force: bool,
    /// Margin added to every required power.
    #[arg(long, default_value_t = 1e-6)]
    slack: f64,
}

#[derive(Args)]
struct SimFlags {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    horizon: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Feasibility verdict, optimal partition and capacities.
    Check(Common),
    /// Build a partition encoder and write it with its predictions.
    Design(Common),
    /// Monte Carlo run of a saved design.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        design: PathBuf,
        /// CSV trace of every step of every trial.
        #[arg(long)]
        trace: Option<PathBuf>,
        #[command(flatten)]
        sim: SimFlags,
    },
    /// LQR design and the separation check in closed loop.
    Control {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        sim: SimFlags,
    },
    /// Shannon and linear capacities of the channel.
    Capacity(Common),
    /// Sweep random instances for partition-structured optima.
    Conjecture {
        /// Comma-separated `NxK` pairs (channels x modes).
        #[arg(long, default_value = "2x2,2x3,3x2,3x3")]
        dims: String,
        /// Instances per dimension pair.
        #[arg(long, default_value_t = 20)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 50)]
        restarts: usize,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
}

/// A report and whether its verdict is negative (exit 2).
struct Done {
    negative: bool,
}

fn emit<T: Serialize>(command: &str, input: &[u8], payload: T, out: Option<&Path>, force: bool) -> Result<(), CliError> {
    let env = Envelope::new(command, input, payload);
    match out {
        Some(path) => output::write_json(path, force, &env),
        None => {
            let text = serde_json::to_string_pretty(&env).map_err(|e| CliError::Io(e.to_string()))?;
            println!("{text}");
            Ok(())
        }
    }
}

fn sim_args(sim: &SimFlags, traced: bool) -> SimulateArgs {
    SimulateArgs {
        horizon: sim.horizon,
        trials: sim.trials,
        seed: sim.seed,
        traced,
    }
}

fn run(cli: Cli) -> Result<Done, CliError> {
    match cli.command {
        Command::Check(c) => {
            let loaded = scenario::load(&c.scenario)?;
            let report = commands::check(&loaded.file, c.slack)?;
            let negative = !report.feasible;
            eprintln!(
                "{}: minimum power {} (required {}), budget {}",
                if negative { "infeasible" } else { "feasible" },
                report.stability.min_power,
                report.required_power,
                report.power
            );
            emit("check", &loaded.bytes, report, c.out.as_deref(), c.force)?;
            Ok(Done { negative })
        }
        Command::Design(c) => {
            let loaded = scenario::load(&c.scenario)?;
            let out = c
                .out
                .as_deref()
                .ok_or_else(|| CliError::Invalid("design needs --out".into()))?;
            if out.exists() && !c.force {
                return Err(CliError::Exists(out.display().to_string()));
            }
            let report = commands::design(&loaded.file, c.slack)?;
            eprintln!(
                "predicted MSE {}, predicted power {} of {}",
                report.predicted_mse, report.predicted_power, report.power_budget
            );
            emit("design", &loaded.bytes, report, Some(out), c.force)?;
            Ok(Done { negative: false })
        }
        Command::Simulate {
            common,
            design,
            trace,
            sim,
        } => {
            let loaded = scenario::load(&common.scenario)?;
            let design = commands::load_design(&design)?;
            for path in [common.out.as_deref(), trace.as_deref()].into_iter().flatten() {
                if path.exists() && !common.force {
                    return Err(CliError::Exists(path.display().to_string()));
                }
            }
            let (report, records) = commands::simulate(&loaded.file, &design, &sim_args(&sim, trace.is_some()))?;
            if let Some(path) = &trace {
                output::write_trace(path, common.force, design.design.k(), &records)?;
            }
            eprintln!(
                "empirical MSE {}, empirical power {}, diverged {}",
                report.summary.empirical_mse, report.summary.empirical_power, report.summary.diverged
            );
            emit("simulate", &loaded.bytes, report, common.out.as_deref(), common.force)?;
            Ok(Done { negative: false })
        }
        Command::Control { common, sim } => {
            let loaded = scenario::load(&common.scenario)?;
            let report = commands::control(&loaded.file, &sim_args(&sim, false), common.slack)?;
            eprintln!(
                "predicted LQR cost {}, empirical {}, relative deviation {}",
                report.predicted_lqr_cost, report.empirical_lqr_cost, report.rel_dev
            );
            emit("control", &loaded.bytes, report, common.out.as_deref(), common.force)?;
            Ok(Done { negative: false })
        }
        Command::Capacity(c) => {
            let loaded = scenario::load(&c.scenario)?;
            let report = commands::capacity(&loaded.file)?;
            emit("capacity", &loaded.bytes, report, c.out.as_deref(), c.force)?;
            Ok(Done { negative: false })
        }
        Command::Conjecture {
            dims,
            count,
            seed,
            restarts,
            out,
            force,
        } => {
            if let Some(path) = out.as_deref().filter(|p| p.exists() && !force) {
                return Err(CliError::Exists(path.display().to_string()));
            }
            let parsed = commands::parse_dims(&dims)?;
            let report = commands::conjecture(&parsed, count, seed, restarts)?;
            eprintln!(
                "structured and within 1% of the oracle: {:.3} of {} instances; {} candidate counterexamples",
                report.sweep.consistent_fraction,
                report.sweep.records.len(),
                report.candidate_counterexamples.len()
            );
            let input = format!("dims={dims};count={count};seed={seed};restarts={restarts}");
            emit("conjecture", input.as_bytes(), report, out.as_deref(), force)?;
            Ok(Done { negative: false })
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(done) => ExitCode::from(if done.negative { 2 } else { 0 }),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
