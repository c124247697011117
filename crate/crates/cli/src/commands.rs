use ckf_core::coded_kf::{build_partition_encoder, transmit_power, EncoderDesign};
use ckf_core::conjecture::{run_conjecture_sweep, ConjectureConfig, SweepRecord, SweepReport};
use ckf_core::control::{check_stabilizability_detectability, solve_control_dare, verify_separation, SeparationReport};
use ckf_core::linalg::{iterate_riccati, SolverConfig};
use ckf_core::models::{validate_assumptions, Scenario};
use ckf_core::simulation::{compare_to_theory, run_estimation_sim, run_estimation_sim_traced, SimulationSummary, TheoryComparison};
use ckf_core::stability::{
    is_matched, linear_capacity, min_linear_power, shannon_capacity, suboptimality_gap, GapReport, Partition,
    StabilityReport, DEFAULT_ENUMERATION_BUDGET,
};
use ckf_core::Error;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::scenario::ScenarioFile;
use crate::CliError;

#[derive(Debug, Serialize)]
pub struct CheckReport {
    pub feasible: bool,
    /// Minimum linear power plus the configured slack.
    pub required_power: f64,
    pub power: f64,
    pub slack: f64,
    pub stability: StabilityReport,
    pub warnings: Vec<String>,
}

pub fn check(file: &ScenarioFile, slack: f64) -> Result<CheckReport, CliError> {
    let scenario = file.scenario()?;
    let stability = min_linear_power(&scenario)?;
    let required_power = stability.min_power + slack;
    Ok(CheckReport {
        feasible: required_power <= scenario.power,
        required_power,
        power: scenario.power,
        slack,
        warnings: validate_assumptions(&scenario).iter().map(ToString::to_string).collect(),
        stability,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DesignReport {
    pub design: EncoderDesign,
    pub partition: Partition,
    pub pi: Vec<f64>,
    pub alpha: Option<Vec<f64>>,
    pub p_star: DMatrix<f64>,
    pub predicted_mse: f64,
    pub predicted_power: f64,
    pub power_budget: f64,
}

/// Per-channel allocation for the optimal partition: each used channel gets
/// its minimum plus `slack`, and the rest of the budget is shared in
/// proportion to those requirements.
fn allocate(stability: &StabilityReport, power: f64, slack: f64) -> Result<Vec<f64>, CliError> {
    let required: Vec<f64> = stability
        .best_partition
        .sets
        .iter()
        .zip(&stability.set_powers)
        .map(|(set, p)| if set.is_empty() { 0.0 } else { p + slack })
        .collect();
    let total: f64 = required.iter().sum();
    if !(total <= power) {
        return Err(CliError::Infeasible(format!(
            "power {power} is below the required {total} (minimum {} plus slack {slack} per used channel)",
            stability.min_power
        )));
    }
    let leftover = power - total;
    Ok(required
        .iter()
        .map(|r| if total > 0.0 { r + leftover * r / total } else { 0.0 })
        .collect())
}

fn design_for(scenario: &Scenario, solver: &SolverConfig, slack: f64) -> Result<DesignReport, CliError> {
    let stability = min_linear_power(scenario)?;
    let pi = allocate(&stability, scenario.power, slack)?;
    let partition = stability.best_partition.clone();
    let design = build_partition_encoder(&partition, &pi, &scenario.source, &scenario.channel, solver)?;
    let outcome = iterate_riccati(&scenario.source, &scenario.channel, &design, solver)?;
    let p_star = outcome
        .p
        .ok_or_else(|| CliError::Infeasible(format!("designed encoder did not converge ({:?})", outcome.status)))?;
    Ok(DesignReport {
        predicted_mse: p_star.trace(),
        predicted_power: transmit_power(&design, &p_star)?,
        alpha: design.alpha.clone(),
        design,
        partition,
        pi,
        p_star,
        power_budget: scenario.power,
    })
}

pub fn design(file: &ScenarioFile, slack: f64) -> Result<DesignReport, CliError> {
    design_for(&file.scenario()?, &file.solver()?, slack)
}

/// Accepts either a bare design report or an envelope wrapping one.
pub fn load_design(path: &std::path::Path) -> Result<DesignReport, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let value: serde_json::Value =
        serde_json::from_slice(&bytes).map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))?;
    let inner = match value.get("payload") {
        Some(p) => p.clone(),
        None => value,
    };
    serde_json::from_value(inner).map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))
}

#[derive(Debug, Serialize)]
pub struct SimulateReport {
    pub summary: SimulationSummary,
    pub theory: Option<TheoryComparison>,
    pub horizon: usize,
    pub burn_in: usize,
    pub trials: usize,
    pub seed: u64,
}

pub struct SimulateArgs {
    pub horizon: Option<usize>,
    pub trials: Option<usize>,
    pub seed: Option<u64>,
    pub traced: bool,
}

pub fn simulate(
    file: &ScenarioFile,
    design: &DesignReport,
    args: &SimulateArgs,
) -> Result<(SimulateReport, Vec<ckf_core::simulation::TraceRecord>), CliError> {
    let scenario = file.scenario()?;
    let cfg = file.simulation(args.horizon, args.trials, args.seed)?;
    let design = &design.design;
    design.check_dims(scenario.k(), scenario.n())?;
    let (summary, trace) = if args.traced {
        run_estimation_sim_traced(&scenario, design, &cfg)?
    } else {
        (run_estimation_sim(&scenario, design, &cfg)?, Vec::new())
    };
    let outcome = iterate_riccati(&scenario.source, &scenario.channel, design, &file.solver()?)?;
    let theory = match &outcome.p {
        Some(p) => Some(compare_to_theory(&summary, p, design)?),
        None => None,
    };
    Ok((
        SimulateReport {
            summary,
            theory,
            horizon: cfg.horizon,
            burn_in: cfg.burn_in,
            trials: cfg.trials,
            seed: cfg.seed,
        },
        trace,
    ))
}

#[derive(Debug, Serialize)]
pub struct ControlReport {
    /// `Tr(QF)`.
    pub full_info_cost: f64,
    /// `Tr(P*)`.
    pub estimation_mse: f64,
    pub predicted_lqr_cost: f64,
    pub empirical_lqr_cost: f64,
    pub rel_dev: f64,
    pub f: DMatrix<f64>,
    pub k: DMatrix<f64>,
    pub separation: SeparationReport,
}

pub fn control(file: &ScenarioFile, args: &SimulateArgs, slack: f64) -> Result<ControlReport, CliError> {
    let system = file
        .control_system()?
        .ok_or_else(|| CliError::Invalid("scenario has no control block".into()))?;
    let violations = check_stabilizability_detectability(&system);
    if !violations.is_empty() {
        let list: Vec<String> = violations.iter().map(ToString::to_string).collect();
        return Err(CliError::Core(Error::NotStabilizable(list.join("; "))));
    }
    let canonical = file.canonical_source()?;
    let k = system.k();
    if !canonical.stripped_modes.is_empty() || canonical.transform != DMatrix::identity(k, k) {
        return Err(CliError::Invalid(
            "control requires a diagonal source matrix with only unstable modes".into(),
        ));
    }
    let solver = file.solver()?;
    let lqr = solve_control_dare(&system, &solver)?;
    let scenario = Scenario::new(canonical.source, file.channel()?, file.power)?;
    let designed = design_for(&scenario, &solver, slack)?;
    let cfg = file.simulation(args.horizon, args.trials, args.seed)?;
    let separation = verify_separation(&system, &scenario.channel, &designed.design, &lqr, &cfg)?;
    Ok(ControlReport {
        full_info_cost: lqr.full_info_cost,
        estimation_mse: separation.estimation_mse,
        predicted_lqr_cost: separation.rhs,
        empirical_lqr_cost: separation.lhs,
        rel_dev: separation.rel_dev,
        f: lqr.f,
        k: lqr.k,
        separation,
    })
}

#[derive(Debug, Serialize)]
pub struct CapacityReport {
    pub power: f64,
    pub shannon_capacity_nats: f64,
    pub water_filling: Vec<f64>,
    pub linear_capacity_nats: f64,
    pub source_rate_nats: f64,
    /// Present for a scalar source.
    pub suboptimality: Option<GapReport>,
    pub matched: bool,
}

pub fn capacity(file: &ScenarioFile) -> Result<CapacityReport, CliError> {
    let power = file.power;
    if !(power >= 0.0 && power.is_finite()) {
        return Err(CliError::Invalid(format!("power must be finite and nonnegative, got {power}")));
    }
    let source = file.canonical_source()?.source;
    let channel = file.channel()?;
    let (shannon, alloc) = shannon_capacity(&channel, power);
    let source_rate = source.sum_log_moduli();
    let suboptimality = (source.dim() == 1).then(|| suboptimality_gap(&channel, power));
    let (linear, matched) = if power > 0.0 {
        let scenario = Scenario::new(source, channel, power)?;
        (linear_capacity(&scenario)?, is_matched(&scenario)?)
    } else {
        (0.0, false)
    };
    Ok(CapacityReport {
        power,
        shannon_capacity_nats: shannon,
        water_filling: alloc,
        linear_capacity_nats: linear,
        source_rate_nats: source_rate,
        suboptimality,
        matched,
    })
}

/// Parses `2x2,2x3` into `(n, k)` pairs.
pub fn parse_dims(s: &str) -> Result<Vec<(usize, usize)>, CliError> {
    s.split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| {
            let (n, k) = t
                .trim()
                .split_once('x')
                .ok_or_else(|| CliError::Invalid(format!("dimension `{t}` is not of the form NxK")))?;
            let parse = |v: &str| {
                v.trim()
                    .parse::<usize>()
                    .ok()
                    .filter(|&d| d > 0)
                    .ok_or_else(|| CliError::Invalid(format!("bad dimension `{t}`")))
            };
            Ok((parse(n)?, parse(k)?))
        })
        .collect()
}

#[derive(Debug, Serialize)]
pub struct ConjectureReport {
    pub sweep: SweepReport,
    pub candidate_counterexamples: Vec<SweepRecord>,
}

pub fn conjecture(dims: &[(usize, usize)], count: usize, seed: u64, restarts: usize) -> Result<ConjectureReport, CliError> {
    for &(n, k) in dims {
        if (n as f64).powi(k as i32) > DEFAULT_ENUMERATION_BUDGET as f64 {
            return Err(CliError::Core(Error::BudgetExceeded(format!(
                "{n}x{k} needs {n}^{k} partition evaluations"
            ))));
        }
    }
    if restarts == 0 {
        return Err(CliError::Invalid("restarts must be at least 1".into()));
    }
    let cfg = ConjectureConfig {
        seed,
        ..Default::default()
    };
    let sweep = run_conjecture_sweep(dims, count, seed, restarts, &cfg);
    let candidate_counterexamples = sweep.records.iter().filter(|r| r.candidate_counterexample).cloned().collect();
    Ok(ConjectureReport {
        sweep,
        candidate_counterexamples,
    })
}
