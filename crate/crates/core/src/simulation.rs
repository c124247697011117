//! Seeded Monte Carlo simulation of the closed loop
//! source → encoder → channel → decoder with ideal feedback.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coded_kf::{predictor_gain, transmit_power, EncoderDesign};
use crate::error::{Error, Result};
use crate::linalg::{max_abs, riccati_step, sym_sqrt, SolverConfig};
use crate::models::{DiagonalChannel, Scenario, SourceModel};

/// Running MSE above this multiple of `Tr(P*)` flags divergence.
pub const DIVERGENCE_FACTOR: f64 = 1e6;
/// Without a fixed point, divergence is declared above this multiple of `Tr(Q)`.
pub const ABSOLUTE_DIVERGENCE_FACTOR: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub horizon: usize,
    pub burn_in: usize,
    pub trials: usize,
    pub seed: u64,
}

impl SimulationConfig {
    /// Burn-in defaults to a tenth of the horizon.
    pub fn new(horizon: usize, trials: usize, seed: u64) -> Self {
        Self {
            horizon,
            burn_in: horizon / 10,
            trials,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        if self.horizon == 0 || self.burn_in >= self.horizon {
            return Err(Error::InsufficientData(format!(
                "burn_in {} leaves no samples in a horizon of {}",
                self.burn_in, self.horizon
            )));
        }
        Ok(())
    }

    /// Post-burn-in samples across all trials.
    pub fn effective_samples(&self) -> u64 {
        (self.horizon.saturating_sub(self.burn_in) * self.trials) as u64
    }
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self::new(10_000, 1, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSummary {
    /// Time-and-trial average of `‖S_t − Ŝ_t‖²` after burn-in.
    pub empirical_mse: f64,
    /// Time-and-trial average of `‖X_t‖²` after burn-in.
    pub empirical_power: f64,
    /// Trial-averaged squared error at every step.
    pub per_step_mse: Vec<f64>,
    pub diverged: bool,
    /// Number of post-burn-in samples entering the averages.
    pub samples: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub t: usize,
    pub trial: usize,
    pub s: Vec<f64>,
    pub s_hat: Vec<f64>,
    pub sq_err: f64,
    pub power: f64,
}

/// Random-number roles; each `(trial, role)` pair owns one ChaCha stream.
#[derive(Debug, Clone, Copy)]
#[repr(u64)]
pub(crate) enum Role {
    Initial = 0,
    Process = 1,
    Channel = 2,
    Dither = 3,
}

pub(crate) fn stream(seed: u64, trial: usize, role: Role) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((trial as u64) << 2) | role as u64);
    rng
}

pub(crate) fn gaussian(rng: &mut ChaCha8Rng, sqrt_cov: &DMatrix<f64>) -> DVector<f64> {
    let z = DVector::from_fn(sqrt_cov.ncols(), |_, _| StandardNormal.sample(rng));
    sqrt_cov * z
}

/// Neumaier-compensated sum, so per-trial totals do not depend on how the
/// loop is split.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Time-varying encoder and predictor gains `(G_t, K_t)`. They depend only
/// on the covariance recursion, so every trial shares them. Once the
/// recursion settles (or stops being computable) the last pair is reused.
pub(crate) struct GainSchedule {
    steps: Vec<(DMatrix<f64>, DMatrix<f64>)>,
}

impl GainSchedule {
    pub fn build(
        source: &SourceModel,
        channel: &DiagonalChannel,
        design: &EncoderDesign,
        horizon: usize,
        cfg: &SolverConfig,
    ) -> Result<Self> {
        design.check_dims(source.dim(), channel.inputs())?;
        let bound = cfg.trace_bound_for(&source.q);
        let mut p = source.q.clone();
        let mut steps = Vec::new();
        for _ in 0..horizon {
            let pair = match (design.gain(&p), predictor_gain(design, source, channel, &p)) {
                (Ok(g), Ok(k)) => (g, k),
                (Err(Error::IllConditioned(_)), _) | (_, Err(Error::IllConditioned(_)))
                    if !steps.is_empty() =>
                {
                    break
                }
                (Err(e), _) | (_, Err(e)) => return Err(e),
            };
            steps.push(pair);
            let next = match riccati_step(source, channel, design, &p) {
                Ok(next) if next.iter().all(|v| v.is_finite()) && next.trace() <= bound => next,
                Ok(_) | Err(Error::IllConditioned(_)) => break,
                Err(e) => return Err(e),
            };
            let settled = max_abs(&(&next - &p)) <= cfg.tolerance * max_abs(&next).max(1.0);
            p = next;
            if settled {
                let g = design.gain(&p)?;
                let k = predictor_gain(design, source, channel, &p)?;
                steps.push((g, k));
                break;
            }
        }
        Ok(Self { steps })
    }

    pub fn at(&self, t: usize) -> (&DMatrix<f64>, &DMatrix<f64>) {
        let (g, k) = &self.steps[t.min(self.steps.len() - 1)];
        (g, k)
    }
}

struct TrialResult {
    sq_err: Vec<f64>,
    mse: CompensatedSum,
    power: CompensatedSum,
    total_power: CompensatedSum,
    steps_run: usize,
    diverged: bool,
    trace: Vec<TraceRecord>,
}

fn run_trial(
    scenario: &Scenario,
    design: &EncoderDesign,
    schedule: &GainSchedule,
    cfg: &SimulationConfig,
    trial: usize,
    bound: f64,
    keep_trace: bool,
) -> TrialResult {
    let src = &scenario.source;
    let k = src.dim();
    let h = DVector::from_column_slice(&scenario.channel.gains);
    let q_sqrt = sym_sqrt(&src.q);
    let dither = (max_abs(&design.omega) > 0.0).then(|| sym_sqrt(&design.omega));
    let n = h.len();
    let eye_n = DMatrix::identity(n, n);

    let mut rng_init = stream(cfg.seed, trial, Role::Initial);
    let mut rng_w = stream(cfg.seed, trial, Role::Process);
    let mut rng_z = stream(cfg.seed, trial, Role::Channel);
    let mut rng_m = stream(cfg.seed, trial, Role::Dither);

    // The error is propagated directly; `s = ŝ + e` grows without bound for
    // an unstable source and differencing it would lose all precision.
    let mut e = gaussian(&mut rng_init, &q_sqrt);
    let mut s_hat = DVector::zeros(k);
    let mut out = TrialResult {
        sq_err: vec![f64::INFINITY; cfg.horizon],
        mse: CompensatedSum::default(),
        power: CompensatedSum::default(),
        total_power: CompensatedSum::default(),
        steps_run: 0,
        diverged: false,
        trace: Vec::new(),
    };
    let mut running = CompensatedSum::default();

    for t in 0..cfg.horizon {
        let (g, gain_k) = schedule.at(t);
        let mut x = g * &e;
        if let Some(d) = &dither {
            x += gaussian(&mut rng_m, d);
        }
        let z = gaussian(&mut rng_z, &eye_n);
        let y = x.component_mul(&h) + z;

        let err = e.norm_squared();
        let pw = x.norm_squared();
        out.sq_err[t] = err;
        out.total_power.add(pw);
        running.add(err);
        out.steps_run = t + 1;
        if t >= cfg.burn_in {
            out.mse.add(err);
            out.power.add(pw);
        }
        if keep_trace {
            out.trace.push(TraceRecord {
                t,
                trial,
                s: (&s_hat + &e).iter().cloned().collect(),
                s_hat: s_hat.iter().cloned().collect(),
                sq_err: err,
                power: pw,
            });
        }
        if !err.is_finite() || running.value() / (t + 1) as f64 > bound {
            out.diverged = true;
            break;
        }

        let innovation = gain_k * y;
        s_hat = &src.a * &s_hat + &innovation;
        e = &src.a * &e + gaussian(&mut rng_w, &q_sqrt) - innovation;
    }
    out
}

/// Divergence threshold for the running MSE.
pub(crate) fn divergence_bound(source: &SourceModel, p_star: Option<&DMatrix<f64>>) -> f64 {
    match p_star {
        Some(p) => DIVERGENCE_FACTOR * p.trace(),
        None => ABSOLUTE_DIVERGENCE_FACTOR * source.q.trace(),
    }
}

fn simulate(
    scenario: &Scenario,
    design: &EncoderDesign,
    cfg: &SimulationConfig,
    keep_trace: bool,
) -> Result<(SimulationSummary, Vec<TraceRecord>)> {
    cfg.validate()?;
    let solver = SolverConfig::default();
    let schedule = GainSchedule::build(&scenario.source, &scenario.channel, design, cfg.horizon, &solver)?;
    let p_star = crate::linalg::iterate_riccati(&scenario.source, &scenario.channel, design, &solver)?.p;
    let bound = divergence_bound(&scenario.source, p_star.as_ref());

    let results: Vec<TrialResult> = (0..cfg.trials)
        .into_par_iter()
        .map(|trial| run_trial(scenario, design, &schedule, cfg, trial, bound, keep_trace))
        .collect();

    let diverged = results.iter().any(|r| r.diverged);
    let mut per_step_mse = vec![0.0; cfg.horizon];
    for (t, slot) in per_step_mse.iter_mut().enumerate() {
        let mut acc = CompensatedSum::default();
        for r in &results {
            acc.add(r.sq_err[t]);
        }
        *slot = acc.value() / cfg.trials as f64;
    }
    let samples = cfg.effective_samples();
    let (empirical_mse, empirical_power) = if diverged {
        let steps: usize = results.iter().map(|r| r.steps_run).sum();
        let mut pw = CompensatedSum::default();
        results.iter().for_each(|r| pw.add(r.total_power.value()));
        (f64::INFINITY, pw.value() / steps.max(1) as f64)
    } else {
        let mut mse = CompensatedSum::default();
        let mut pw = CompensatedSum::default();
        for r in &results {
            mse.add(r.mse.value());
            pw.add(r.power.value());
        }
        (mse.value() / samples as f64, pw.value() / samples as f64)
    };
    let trace = results.into_iter().flat_map(|r| r.trace).collect();
    Ok((
        SimulationSummary {
            empirical_mse,
            empirical_power,
            per_step_mse,
            diverged,
            samples: if diverged { 0 } else { samples },
        },
        trace,
    ))
}

pub fn run_estimation_sim(
    scenario: &Scenario,
    design: &EncoderDesign,
    cfg: &SimulationConfig,
) -> Result<SimulationSummary> {
    Ok(simulate(scenario, design, cfg, false)?.0)
}

/// As [`run_estimation_sim`], also returning every step of every trial.
pub fn run_estimation_sim_traced(
    scenario: &Scenario,
    design: &EncoderDesign,
    cfg: &SimulationConfig,
) -> Result<(SimulationSummary, Vec<TraceRecord>)> {
    simulate(scenario, design, cfg, true)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoryComparison {
    pub mse_rel_dev: f64,
    pub power_rel_dev: f64,
    pub predicted_mse: f64,
    pub predicted_power: f64,
}

/// Relative deviations of the empirical MSE from `Tr(P*)` and of the
/// empirical power from `transmit_power(design, P*)`.
pub fn compare_to_theory(
    summary: &SimulationSummary,
    p_star: &DMatrix<f64>,
    design: &EncoderDesign,
) -> Result<TheoryComparison> {
    let predicted_mse = p_star.trace();
    let predicted_power = transmit_power(design, p_star)?;
    if summary.diverged {
        return Ok(TheoryComparison {
            mse_rel_dev: f64::INFINITY,
            power_rel_dev: f64::INFINITY,
            predicted_mse,
            predicted_power,
        });
    }
    if summary.samples == 0 {
        return Err(Error::InsufficientData("no post-burn-in samples".into()));
    }
    let rel = |emp: f64, th: f64| {
        if th == 0.0 {
            emp.abs()
        } else {
            (emp - th).abs() / th.abs()
        }
    };
    Ok(TheoryComparison {
        mse_rel_dev: rel(summary.empirical_mse, predicted_mse),
        power_rel_dev: rel(summary.empirical_power, predicted_power),
        predicted_mse,
        predicted_power,
    })
}
