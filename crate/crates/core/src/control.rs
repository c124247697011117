//! LQG control over the coded channel: control Riccati equation, LQR gain,
//! closed-loop simulation and the separation check.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coded_kf::EncoderDesign;
use crate::error::{Error, Result};
use crate::linalg::{
    ensure_square, is_positive_definite, iterate_riccati, max_abs, min_eigenvalue, spectral_radius,
    sym_sqrt, symmetrize, SolverConfig,
};
use crate::models::{DiagonalChannel, SourceModel};
use crate::simulation::{gaussian, stream, CompensatedSum, GainSchedule, Role, SimulationConfig};

/// Threshold for the PBH rank tests, relative to the largest singular value.
const PBH_RANK_TOL: f64 = 1e-10;
/// Largest `F` residual accepted from the control Riccati iteration.
const CONTROL_RESIDUAL_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlSystem {
    pub a: DMatrix<f64>,
    /// k x l input matrix.
    pub b: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub c_cost: DMatrix<f64>,
    pub e_cost: DMatrix<f64>,
}

impl ControlSystem {
    /// Requires `Q ≻ 0` and `C ≻ 0`. `E` must be positive definite, except
    /// that `E = 0` is accepted when `BᵀCB ≻ 0` keeps the gain well defined.
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        q: DMatrix<f64>,
        c_cost: DMatrix<f64>,
        e_cost: DMatrix<f64>,
    ) -> Result<Self> {
        let k = ensure_square(&a, "A")?;
        let l = b.ncols();
        if b.nrows() != k {
            return Err(Error::Dimension(format!("B has {} rows, expected {k}", b.nrows())));
        }
        for (m, name, d) in [(&q, "Q", k), (&c_cost, "C", k), (&e_cost, "E", l)] {
            if m.nrows() != d || m.ncols() != d {
                return Err(Error::Dimension(format!("{name} must be {d}x{d}")));
            }
            if max_abs(&(m - m.transpose())) > 1e-9 * max_abs(m).max(1.0) {
                return Err(Error::Model(format!("{name} is not symmetric")));
            }
        }
        if !is_positive_definite(&q) {
            return Err(Error::Model("Q must be positive definite".into()));
        }
        if !is_positive_definite(&c_cost) {
            return Err(Error::Model("C must be positive definite".into()));
        }
        if !is_positive_definite(&e_cost) {
            let zero = max_abs(&e_cost) == 0.0;
            let btcb = b.transpose() * &c_cost * &b;
            if !(zero && is_positive_definite(&btcb)) {
                return Err(Error::Model(
                    "E must be positive definite (E = 0 only when BᵀCB is positive definite)".into(),
                ));
            }
        }
        Ok(Self {
            a,
            b,
            q: symmetrize(&q),
            c_cost: symmetrize(&c_cost),
            e_cost: symmetrize(&e_cost),
        })
    }

    pub fn k(&self) -> usize {
        self.a.nrows()
    }

    pub fn source(&self) -> Result<SourceModel> {
        SourceModel::new(self.a.clone(), self.q.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ControlViolation {
    NotStabilizable { re: f64, im: f64 },
    NotDetectable { re: f64, im: f64 },
}

impl fmt::Display for ControlViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ControlViolation::NotStabilizable { re, im } => {
                write!(f, "(A, B) not stabilizable: mode {re}{im:+}i is unreachable")
            }
            ControlViolation::NotDetectable { re, im } => {
                write!(f, "(A, C^1/2) not detectable: mode {re}{im:+}i is unobservable")
            }
        }
    }
}

fn complex(m: &DMatrix<f64>) -> DMatrix<Complex<f64>> {
    m.map(|v| Complex::new(v, 0.0))
}

fn rank_c(m: &DMatrix<Complex<f64>>) -> usize {
    let sv = m.singular_values();
    let top = sv.iter().cloned().fold(0.0, f64::max);
    if top == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > PBH_RANK_TOL * top).count()
}

/// PBH tests on every eigenvalue with modulus ≥ 1.
pub fn check_stabilizability_detectability(system: &ControlSystem) -> Vec<ControlViolation> {
    let k = system.k();
    let a = complex(&system.a);
    let b = complex(&system.b);
    let c_half = complex(&sym_sqrt(&system.c_cost));
    let mut out = Vec::new();
    for lam in system.a.complex_eigenvalues().iter() {
        if lam.norm() < 1.0 {
            continue;
        }
        let shifted = &a - DMatrix::<Complex<f64>>::identity(k, k) * *lam;
        let mut ctrl = DMatrix::zeros(k, k + b.ncols());
        ctrl.view_mut((0, 0), (k, k)).copy_from(&shifted);
        ctrl.view_mut((0, k), (k, b.ncols())).copy_from(&b);
        if rank_c(&ctrl) < k {
            out.push(ControlViolation::NotStabilizable { re: lam.re, im: lam.im });
        }
        let mut obs = DMatrix::zeros(2 * k, k);
        obs.view_mut((0, 0), (k, k)).copy_from(&shifted);
        obs.view_mut((k, 0), (k, k)).copy_from(&c_half);
        if rank_c(&obs) < k {
            out.push(ControlViolation::NotDetectable { re: lam.re, im: lam.im });
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LqrDesign {
    pub f: DMatrix<f64>,
    /// l x k feedback gain, `U = −K Ŝ`.
    pub k: DMatrix<f64>,
    /// `Tr(Q F)`.
    pub full_info_cost: f64,
}

fn pinv_symmetric(m: &DMatrix<f64>) -> DMatrix<f64> {
    let m = symmetrize(m);
    let eps = 1e-12 * max_abs(&m).max(f64::MIN_POSITIVE);
    let (r, c) = m.shape();
    match m.clone().cholesky() {
        Some(c) => c.inverse(),
        None => m
            .pseudo_inverse(eps)
            .unwrap_or_else(|_| DMatrix::zeros(r, c)),
    }
}

fn control_step(system: &ControlSystem, f: &DMatrix<f64>) -> DMatrix<f64> {
    let (a, b) = (&system.a, &system.b);
    let s = &system.e_cost + b.transpose() * f * b;
    let fb = f * b;
    let m = &fb * pinv_symmetric(&s) * fb.transpose();
    symmetrize(&(&system.c_cost + a.transpose() * (f - m) * a))
}

/// Iterates `F ← C + Aᵀ(F − FB(E + BᵀFB)⁻¹BᵀF)A` from `F = C`.
pub fn solve_control_dare(system: &ControlSystem, cfg: &SolverConfig) -> Result<LqrDesign> {
    cfg.validate()?;
    let violations = check_stabilizability_detectability(system);
    if let Some(v) = violations
        .iter()
        .find(|v| matches!(v, ControlViolation::NotStabilizable { .. }))
    {
        return Err(Error::NotStabilizable(v.to_string()));
    }
    let bound = cfg.trace_bound_for(&system.c_cost);
    let mut f = system.c_cost.clone();
    let mut settled = false;
    for _ in 0..cfg.max_iterations {
        let next = control_step(system, &f);
        if next.iter().any(|v| !v.is_finite()) || next.trace() > bound {
            return Err(Error::NotStabilizable("control Riccati iteration diverged".into()));
        }
        let diff = max_abs(&(&next - &f));
        f = next;
        if diff <= cfg.tolerance * max_abs(&f).max(1.0) {
            settled = true;
            break;
        }
    }
    if !settled {
        return Err(Error::NotStabilizable(format!(
            "control Riccati iteration did not settle in {} iterations",
            cfg.max_iterations
        )));
    }
    let residual = max_abs(&(&f - control_step(system, &f)));
    if residual > CONTROL_RESIDUAL_TOL * max_abs(&f).max(1.0) {
        return Err(Error::NotStabilizable(format!("control Riccati residual {residual:e}")));
    }
    let b = &system.b;
    let s = &system.e_cost + b.transpose() * &f * b;
    let k = pinv_symmetric(&s) * b.transpose() * &f * &system.a;
    let rho = spectral_radius(&(&system.a - b * &k))?;
    if rho >= 1.0 {
        return Err(Error::NotStabilizable(format!("closed loop has spectral radius {rho}")));
    }
    Ok(LqrDesign {
        full_info_cost: (&system.q * &f).trace(),
        f,
        k,
    })
}

/// Weight on the estimation error in the LQG cost: `Kᵀ(E + BᵀFB)K`, which
/// equals `C + AᵀFA − F` at the control fixed point.
pub fn estimation_weight(system: &ControlSystem, lqr: &LqrDesign) -> DMatrix<f64> {
    let s = &system.e_cost + system.b.transpose() * &lqr.f * &system.b;
    symmetrize(&(lqr.k.transpose() * s * &lqr.k))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlSimResult {
    /// Time-and-trial average of `SᵀCS + UᵀEU` after burn-in.
    pub empirical_lqr_cost: f64,
    /// Time-and-trial average of `‖S_t‖²` after burn-in.
    pub empirical_state_power: f64,
    /// Time-and-trial average of `‖S_t − Ŝ_t‖²` after burn-in.
    pub empirical_estimation_mse: f64,
    pub diverged: bool,
    pub samples: u64,
}

struct ControlTrial {
    cost: CompensatedSum,
    state: CompensatedSum,
    err: CompensatedSum,
    diverged: bool,
}

/// Closed loop with `U_t = −K Ŝ_t`. Encoder and decoder both add `B U_t`
/// to their predictions, so the error dynamics match the uncontrolled case.
pub fn run_control_sim(
    system: &ControlSystem,
    channel: &DiagonalChannel,
    design: &EncoderDesign,
    lqr: &LqrDesign,
    cfg: &SimulationConfig,
) -> Result<ControlSimResult> {
    cfg.validate()?;
    let source = system.source()?;
    let k = source.dim();
    design.check_dims(k, channel.inputs())?;
    if lqr.k.ncols() != k || lqr.k.nrows() != system.b.ncols() {
        return Err(Error::Dimension("LQR gain does not match the system".into()));
    }
    let solver = SolverConfig::default();
    let schedule = GainSchedule::build(&source, channel, design, cfg.horizon, &solver)?;
    let p_star = iterate_riccati(&source, channel, design, &solver)?.p;
    let bound = match &p_star {
        Some(p) => {
            1e6 * (lqr.full_info_cost + (p * estimation_weight(system, lqr)).trace()).max(p.trace())
        }
        None => 1e12 * (system.q.trace() * max_abs(&system.c_cost)).max(1.0),
    };

    let h = DVector::from_column_slice(&channel.gains);
    let n = h.len();
    let q_sqrt = sym_sqrt(&system.q);
    let dither = (max_abs(&design.omega) > 0.0).then(|| sym_sqrt(&design.omega));

    let trials: Vec<ControlTrial> = (0..cfg.trials)
        .into_par_iter()
        .map(|trial| {
            let eye_n = DMatrix::identity(n, n);
            let mut rng_init = stream(cfg.seed, trial, Role::Initial);
            let mut rng_w = stream(cfg.seed, trial, Role::Process);
            let mut rng_z = stream(cfg.seed, trial, Role::Channel);
            let mut rng_m = stream(cfg.seed, trial, Role::Dither);
            let mut s = gaussian(&mut rng_init, &q_sqrt);
            let mut s_hat = DVector::zeros(k);
            let mut out = ControlTrial {
                cost: CompensatedSum::default(),
                state: CompensatedSum::default(),
                err: CompensatedSum::default(),
                diverged: false,
            };
            let mut running = CompensatedSum::default();
            for t in 0..cfg.horizon {
                let (g, kf) = schedule.at(t);
                let u = -(&lqr.k * &s_hat);
                let e = &s - &s_hat;
                let mut x = g * &e;
                if let Some(d) = &dither {
                    x += gaussian(&mut rng_m, d);
                }
                let y = x.component_mul(&h) + gaussian(&mut rng_z, &eye_n);
                let stage = (s.transpose() * &system.c_cost * &s)[(0, 0)]
                    + (u.transpose() * &system.e_cost * &u)[(0, 0)];
                running.add(stage);
                if t >= cfg.burn_in {
                    out.cost.add(stage);
                    out.state.add(s.norm_squared());
                    out.err.add(e.norm_squared());
                }
                if !stage.is_finite() || running.value() / (t + 1) as f64 > bound {
                    out.diverged = true;
                    break;
                }
                let bu = &system.b * &u;
                s_hat = &system.a * &s_hat + &bu + kf * y;
                s = &system.a * &s + bu + gaussian(&mut rng_w, &q_sqrt);
            }
            out
        })
        .collect();

    let diverged = trials.iter().any(|t| t.diverged);
    if diverged {
        return Ok(ControlSimResult {
            empirical_lqr_cost: f64::INFINITY,
            empirical_state_power: f64::INFINITY,
            empirical_estimation_mse: f64::INFINITY,
            diverged,
            samples: 0,
        });
    }
    let samples = cfg.effective_samples();
    let mut totals = [CompensatedSum::default(); 3];
    for t in &trials {
        totals[0].add(t.cost.value());
        totals[1].add(t.state.value());
        totals[2].add(t.err.value());
    }
    let avg = |c: &CompensatedSum| c.value() / samples as f64;
    Ok(ControlSimResult {
        empirical_lqr_cost: avg(&totals[0]),
        empirical_state_power: avg(&totals[1]),
        empirical_estimation_mse: avg(&totals[2]),
        diverged,
        samples,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparationReport {
    /// Empirical LQR cost.
    pub lhs: f64,
    /// `Tr(QF) + Tr(P* Kᵀ(E + BᵀFB)K)`.
    pub rhs: f64,
    pub rel_dev: f64,
    /// `Tr(QF) + Tr(P*)`, which equals `rhs` when the error weight is the
    /// identity.
    pub rhs_unweighted: f64,
    pub rel_dev_unweighted: f64,
    pub full_info_cost: f64,
    /// `Tr(P*)`; infinite when the estimation recursion does not converge.
    pub estimation_mse: f64,
    pub empirical_estimation_mse: f64,
    /// False when the estimator diverges, in which case the loop cannot
    /// have finite cost.
    pub estimation_converged: bool,
    pub diverged: bool,
}

pub fn verify_separation(
    system: &ControlSystem,
    channel: &DiagonalChannel,
    design: &EncoderDesign,
    lqr: &LqrDesign,
    cfg: &SimulationConfig,
) -> Result<SeparationReport> {
    cfg.validate()?;
    let source = system.source()?;
    let outcome = iterate_riccati(&source, channel, design, &SolverConfig::default())?;
    let sim = run_control_sim(system, channel, design, lqr, cfg)?;
    let (rhs, rhs_unweighted, mse) = match &outcome.p {
        Some(p) => (
            lqr.full_info_cost + (p * estimation_weight(system, lqr)).trace(),
            lqr.full_info_cost + p.trace(),
            p.trace(),
        ),
        None => (f64::INFINITY, f64::INFINITY, f64::INFINITY),
    };
    let rel = |lhs: f64, rhs: f64| {
        if lhs.is_finite() && rhs.is_finite() {
            (lhs - rhs).abs() / rhs.abs().max(f64::MIN_POSITIVE)
        } else {
            f64::INFINITY
        }
    };
    Ok(SeparationReport {
        lhs: sim.empirical_lqr_cost,
        rhs,
        rel_dev: rel(sim.empirical_lqr_cost, rhs),
        rhs_unweighted,
        rel_dev_unweighted: rel(sim.empirical_lqr_cost, rhs_unweighted),
        full_info_cost: lqr.full_info_cost,
        estimation_mse: mse,
        empirical_estimation_mse: sim.empirical_estimation_mse,
        estimation_converged: outcome.converged(),
        diverged: sim.diverged,
    })
}

/// Smallest eigenvalue of `E + BᵀFB`; positive for any usable design.
pub fn control_curvature(system: &ControlSystem, lqr: &LqrDesign) -> f64 {
    min_eigenvalue(&(&system.e_cost + system.b.transpose() * &lqr.f * &system.b))
}
