//! Numerical probe of the partition structure of power-optimal encoders.
//!
//! For diagonal `B` (entries `b_i = 1/λ_i`) and diagonal `H`, the lab
//! minimizes `Tr(Π)` over encoder matrices `Γ` and diagonal `Π ⪰ 0` subject
//! to `J ⪰ 0`, where `J = BJB − Γᵀ(I + HΠH)⁻¹Γ + BΓᵀΓB`, and checks whether
//! the minimizer uses exactly one sub-channel per mode.
//!
//! `J(ΓS) = S J(Γ) S` for any diagonal `S`, so feasibility depends on `Γ`
//! only up to column scaling. The search works with column-normalized `Γ`,
//! which removes the degenerate direction of a vanishing column.

use argmin::core::{CostFunction, Executor, State};
use argmin::solver::neldermead::NelderMead;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{min_eigenvalue, solve_stable_lyapunov};
use crate::stability::{min_power_for_set, partition_minimum, Partition, DEFAULT_ENUMERATION_BUDGET};

/// Relative trace difference under which two optima count as tied.
const TIE_TOLERANCE: f64 = 1e-9;
/// A non-structured optimum this far below the partition oracle is flagged.
pub const COUNTEREXAMPLE_MARGIN: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConjectureInstance {
    pub b_diag: Vec<f64>,
    pub h_diag: Vec<f64>,
    /// Hard cap on `Tr(Π)` for any reported point.
    pub feasibility_budget: f64,
}

impl ConjectureInstance {
    pub fn new(b_diag: Vec<f64>, h_diag: Vec<f64>, feasibility_budget: f64) -> Result<Self> {
        if b_diag.is_empty() || h_diag.is_empty() {
            return Err(Error::Model("instance needs at least one mode and one channel".into()));
        }
        if b_diag.iter().any(|b| !(b.abs() < 1.0 && *b != 0.0)) {
            return Err(Error::Model("every b_i must satisfy 0 < |b_i| < 1".into()));
        }
        if h_diag.iter().any(|h| !(*h > 0.0 && h.is_finite())) {
            return Err(Error::Model("every h_i must be positive".into()));
        }
        if !(feasibility_budget > 0.0) {
            return Err(Error::Model("feasibility budget must be positive".into()));
        }
        Ok(Self {
            b_diag,
            h_diag,
            feasibility_budget,
        })
    }

    pub fn k(&self) -> usize {
        self.b_diag.len()
    }

    pub fn n(&self) -> usize {
        self.h_diag.len()
    }

    /// Source eigenvalue moduli `1/|b_i|`.
    pub fn lambdas(&self) -> Vec<f64> {
        self.b_diag.iter().map(|b| 1.0 / b.abs()).collect()
    }

    /// Partition oracle: exhaustive minimum of the per-set powers.
    pub fn oracle(&self) -> Result<(f64, Partition)> {
        let (p, part, _) = partition_minimum(&self.lambdas(), &self.h_diag, DEFAULT_ENUMERATION_BUDGET)?;
        Ok((p, part))
    }
}

/// Forcing term `−Γᵀ(I + HΠH)⁻¹Γ + BΓᵀΓB`.
fn forcing(b: &[f64], h: &[f64], gamma: &DMatrix<f64>, pi: &[f64]) -> DMatrix<f64> {
    let k = gamma.ncols();
    let d: Vec<f64> = h.iter().zip(pi).map(|(h, p)| 1.0 / (1.0 + h * h * p)).collect();
    let gram = gamma.transpose() * gamma;
    let weighted = DMatrix::from_fn(gamma.nrows(), k, |i, j| d[i] * gamma[(i, j)]);
    let inner = gamma.transpose() * weighted;
    DMatrix::from_fn(k, k, |i, j| b[i] * b[j] * gram[(i, j)] - inner[(i, j)])
}

/// Solution of `J = BJB − Γᵀ(I + HΠH)⁻¹Γ + BΓᵀΓB` for diagonal `Π`.
pub fn lyapunov_j(instance: &ConjectureInstance, gamma: &DMatrix<f64>, pi: &[f64]) -> Result<DMatrix<f64>> {
    check_shapes(instance, gamma, pi)?;
    let b = DMatrix::from_diagonal(&DVector::from_column_slice(&instance.b_diag));
    solve_stable_lyapunov(&b, &forcing(&instance.b_diag, &instance.h_diag, gamma, pi))
}

fn check_shapes(instance: &ConjectureInstance, gamma: &DMatrix<f64>, pi: &[f64]) -> Result<()> {
    if gamma.nrows() != instance.n() || gamma.ncols() != instance.k() || pi.len() != instance.n() {
        return Err(Error::Dimension(format!(
            "Gamma must be {}x{} and Pi must have {} entries",
            instance.n(),
            instance.k(),
            instance.n()
        )));
    }
    if pi.iter().any(|p| !(*p >= 0.0)) {
        return Err(Error::Model("Pi must be nonnegative".into()));
    }
    Ok(())
}

/// Fast path for diagonal `B`: `J_ij = F_ij / (1 − b_i b_j)`.
fn j_fast(b: &[f64], h: &[f64], gamma: &DMatrix<f64>, pi: &[f64]) -> DMatrix<f64> {
    let f = forcing(b, h, gamma, pi);
    DMatrix::from_fn(f.nrows(), f.ncols(), |i, j| f[(i, j)] / (1.0 - b[i] * b[j]))
}

fn normalize_columns(gamma: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let mut g = gamma.clone();
    for mut col in g.column_iter_mut() {
        let norm = col.norm();
        if !(norm > 1e-12) || !norm.is_finite() {
            return None;
        }
        col /= norm;
    }
    Some(g)
}

/// Per-column count of entries above `rel_threshold` times the column's
/// largest magnitude, and whether every column has at most one.
pub fn sparsity_pattern(gamma: &DMatrix<f64>, rel_threshold: f64) -> (Vec<usize>, bool) {
    let counts: Vec<usize> = gamma
        .column_iter()
        .map(|col| {
            let top = col.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
            if top == 0.0 {
                0
            } else {
                col.iter().filter(|v| v.abs() > rel_threshold * top).count()
            }
        })
        .collect();
    let structured = counts.iter().all(|&c| c <= 1);
    (counts, structured)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConjectureConfig {
    pub seed: u64,
    /// Relative threshold for counting an entry of `Γ` as nonzero.
    pub rel_threshold: f64,
    /// Margin required of `λ_min(J)` inside the penalty.
    pub epsilon: f64,
    /// Penalty weights, applied in increasing order.
    pub penalties: Vec<f64>,
    /// Nelder–Mead iterations per penalty stage.
    pub iterations_per_stage: u64,
}

impl Default for ConjectureConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            rel_threshold: 1e-3,
            epsilon: 1e-8,
            penalties: vec![1e2, 1e4, 1e6, 1e8],
            iterations_per_stage: 1500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConjectureResult {
    /// Column-normalized optimal encoder matrix.
    pub gamma_star: DMatrix<f64>,
    pub pi_star: DMatrix<f64>,
    pub trace: f64,
    pub column_nnz: Vec<usize>,
    pub partition_structured: bool,
    pub restarts_used: usize,
    /// Best feasible trace after each restart (infinite until one is found).
    pub best_objective_history: Vec<f64>,
    pub min_eig_j: f64,
    pub oracle_trace: f64,
    pub oracle_partition: Partition,
    /// Index of the restart that produced the optimum.
    pub best_restart: usize,
}

struct Penalized<'a> {
    b: &'a [f64],
    h: &'a [f64],
    n: usize,
    k: usize,
    mu: f64,
    eps: f64,
}

impl Penalized<'_> {
    fn split(&self, x: &[f64]) -> (DMatrix<f64>, Vec<f64>) {
        let gamma = DMatrix::from_row_slice(self.n, self.k, &x[..self.n * self.k]);
        let pi = x[self.n * self.k..].iter().map(|u| u * u).collect();
        (gamma, pi)
    }
}

impl CostFunction for Penalized<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, x: &Self::Param) -> std::result::Result<f64, argmin::core::Error> {
        let (gamma, pi) = self.split(x);
        let Some(g) = normalize_columns(&gamma) else {
            return Ok(1e30);
        };
        let lmin = min_eigenvalue(&j_fast(self.b, self.h, &g, &pi));
        let viol = (self.eps - lmin).max(0.0);
        Ok(pi.iter().sum::<f64>() + self.mu * viol * viol)
    }
}

fn feasible(b: &[f64], h: &[f64], g: &DMatrix<f64>, pi: &[f64]) -> bool {
    min_eigenvalue(&j_fast(b, h, g, pi)) >= 0.0
}

/// Smallest `Π` (in the coordinate-wise sense) keeping `J ⪰ 0` for the given
/// direction: common scaling by bisection, then per-channel bisection.
fn tighten(b: &[f64], h: &[f64], g: &DMatrix<f64>, pi: &[f64]) -> Option<Vec<f64>> {
    let top = pi.iter().cloned().fold(0.0, f64::max);
    let mut base: Vec<f64> = pi.to_vec();
    let scaled = |c: f64, v: &[f64]| v.iter().map(|p| p * c).collect::<Vec<f64>>();
    let reach = |v: &[f64]| {
        let mut c = 1.0;
        for _ in 0..60 {
            if feasible(b, h, g, &scaled(c, v)) {
                return Some(c);
            }
            c *= 2.0;
        }
        None
    };
    let mut hi = match (top > 0.0).then(|| reach(&base)).flatten() {
        Some(c) => c,
        None => {
            let fill = if top > 0.0 { top } else { 1.0 };
            base = base.iter().map(|&p| if p > 0.0 { p } else { fill }).collect();
            reach(&base)?
        }
    };
    let mut lo = hi / 2.0;
    let mut halvings = 0;
    while feasible(b, h, g, &scaled(lo, &base)) && halvings < 200 {
        hi = lo;
        lo /= 2.0;
        halvings += 1;
    }
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if feasible(b, h, g, &scaled(mid, &base)) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let mut out = scaled(hi, &base);
    for _ in 0..4 {
        for i in 0..out.len() {
            if out[i] == 0.0 {
                continue;
            }
            let mut trial = out.clone();
            trial[i] = 0.0;
            if feasible(b, h, g, &trial) {
                out = trial;
                continue;
            }
            let (mut lo, mut hi) = (0.0, out[i]);
            for _ in 0..80 {
                let mid = 0.5 * (lo + hi);
                trial[i] = mid;
                if feasible(b, h, g, &trial) {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            out[i] = hi;
        }
    }
    Some(out)
}

#[derive(Debug, Clone)]
struct Candidate {
    gamma: DMatrix<f64>,
    pi: Vec<f64>,
    trace: f64,
    nnz: usize,
    restart: usize,
}

fn polish(b: &[f64], h: &[f64], gamma: &DMatrix<f64>, pi: &[f64], restart: usize, thr: f64) -> Option<Candidate> {
    let g = normalize_columns(gamma)?;
    let pi = tighten(b, h, &g, pi)?;
    let trace = pi.iter().sum();
    let nnz = sparsity_pattern(&g, thr).0.iter().sum();
    Some(Candidate {
        gamma: g,
        pi,
        trace,
        nnz,
        restart,
    })
}

/// Lower trace wins; near-ties go to the sparser encoder, then to the
/// earlier restart.
fn better(a: &Candidate, b: &Candidate) -> bool {
    let scale = a.trace.abs().max(b.trace.abs()).max(f64::MIN_POSITIVE);
    if (a.trace - b.trace).abs() > TIE_TOLERANCE * scale {
        return a.trace < b.trace;
    }
    (a.nnz, a.restart) < (b.nnz, b.restart)
}

fn nelder_mead(problem: Penalized<'_>, x0: Vec<f64>, iters: u64) -> Vec<f64> {
    let dim = x0.len();
    let mut simplex = vec![x0.clone()];
    for i in 0..dim {
        let mut v = x0.clone();
        v[i] += 0.1 * (x0[i].abs() + 0.05);
        simplex.push(v);
    }
    let solver = match NelderMead::new(simplex).with_sd_tolerance(1e-14) {
        Ok(s) => s,
        Err(_) => return x0,
    };
    match Executor::new(problem, solver)
        .configure(|state| state.max_iters(iters))
        .run()
    {
        Ok(res) => res.state().get_best_param().cloned().unwrap_or(x0),
        Err(_) => x0,
    }
}

fn run_restart(
    instance: &ConjectureInstance,
    cfg: &ConjectureConfig,
    oracle: &(f64, Partition),
    restart: usize,
) -> Vec<Candidate> {
    let (n, k) = (instance.n(), instance.k());
    let (b, h) = (&instance.b_diag[..], &instance.h_diag[..]);
    let lambdas = instance.lambdas();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(restart as u64);
    let mut out = Vec::new();

    let (gamma0, pi0) = if restart.is_multiple_of(2) {
        let part = if restart == 0 {
            oracle.1.clone()
        } else {
            let asg: Vec<usize> = (0..k).map(|_| rng.random_range(0..n)).collect();
            Partition::from_assignment(&asg, n)
        };
        let mut g = part.indicator(k);
        g.iter_mut().for_each(|v| {
            if *v != 0.0 {
                *v = if rng.random::<bool>() { 1.0 } else { -1.0 };
            }
        });
        let pi: Vec<f64> = part
            .sets
            .iter()
            .zip(h)
            .map(|(s, &hi)| 1.5 * min_power_for_set(s, hi, &lambdas))
            .collect();
        if let Some(c) = polish(b, h, &g, &pi, restart, cfg.rel_threshold) {
            out.push(c);
        }
        (g, pi)
    } else {
        let g = DMatrix::from_fn(n, k, |_, _| StandardNormal.sample(&mut rng));
        let pi = (0..n).map(|_| rng.random_range(0.0..2.0 * oracle.0)).collect();
        (g, pi)
    };

    let mut x: Vec<f64> = gamma0.transpose().iter().cloned().collect();
    x.extend(pi0.iter().map(|p: &f64| p.sqrt()));
    for &mu in &cfg.penalties {
        let problem = Penalized {
            b,
            h,
            n,
            k,
            mu,
            eps: cfg.epsilon,
        };
        x = nelder_mead(problem, x, cfg.iterations_per_stage);
    }
    let gamma = DMatrix::from_row_slice(n, k, &x[..n * k]);
    let pi: Vec<f64> = x[n * k..].iter().map(|u| u * u).collect();
    if let Some(c) = polish(b, h, &gamma, &pi, restart, cfg.rel_threshold) {
        out.push(c);
    }
    out
}

/// Multi-start penalized search for the minimum of `Tr(Π)`. Even restarts
/// begin from partition-structured encoders (the first from the oracle's
/// partition), odd restarts from dense random ones.
pub fn solve_min_trace(
    instance: &ConjectureInstance,
    restarts: usize,
    cfg: &ConjectureConfig,
) -> Result<ConjectureResult> {
    let oracle = instance.oracle()?;
    if !oracle.0.is_finite() {
        return Err(Error::Infeasible("partition oracle is infinite".into()));
    }
    let per_restart: Vec<Vec<Candidate>> = (0..restarts)
        .into_par_iter()
        .map(|r| run_restart(instance, cfg, &oracle, r))
        .collect();

    let mut best: Option<Candidate> = None;
    let mut history = Vec::with_capacity(restarts);
    for cands in per_restart {
        for c in cands {
            if c.trace > instance.feasibility_budget {
                continue;
            }
            if best.as_ref().is_none_or(|b| better(&c, b)) {
                best = Some(c);
            }
        }
        history.push(best.as_ref().map_or(f64::INFINITY, |b| b.trace));
    }
    let best = best.ok_or_else(|| {
        Error::Infeasible(format!(
            "no feasible point within budget {} after {restarts} restarts",
            instance.feasibility_budget
        ))
    })?;
    let j = j_fast(&instance.b_diag, &instance.h_diag, &best.gamma, &best.pi);
    let (column_nnz, partition_structured) = sparsity_pattern(&best.gamma, cfg.rel_threshold);
    Ok(ConjectureResult {
        pi_star: DMatrix::from_diagonal(&DVector::from_column_slice(&best.pi)),
        trace: best.trace,
        column_nnz,
        partition_structured,
        restarts_used: restarts,
        best_objective_history: history,
        min_eig_j: min_eigenvalue(&j),
        oracle_trace: oracle.0,
        oracle_partition: oracle.1,
        best_restart: best.restart,
        gamma_star: best.gamma,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub n: usize,
    pub k: usize,
    pub index: usize,
    pub instance: ConjectureInstance,
    pub result: ConjectureResult,
    /// `trace / oracle − 1`.
    pub gap: f64,
    pub within_one_percent: bool,
    /// Structured and within 1% of the oracle.
    pub consistent: bool,
    /// Non-structured and more than 1% below the oracle.
    pub candidate_counterexample: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimSummary {
    pub n: usize,
    pub k: usize,
    pub instances: usize,
    pub structured_fraction: f64,
    pub consistent_fraction: f64,
    pub max_abs_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub seed: u64,
    pub restarts: usize,
    pub table: Vec<DimSummary>,
    /// Fraction of all instances that are structured and within 1%.
    pub consistent_fraction: f64,
    pub records: Vec<SweepRecord>,
    /// Records that are not structured-and-within-1%.
    pub violations: Vec<SweepRecord>,
    pub errors: Vec<String>,
}

/// Random instance: distinct `b_i` uniform in (0.1, 0.9), `h_i`
/// log-uniform in [0.1, 10].
pub fn sample_instance(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Result<ConjectureInstance> {
    let mut b: Vec<f64> = Vec::with_capacity(k);
    while b.len() < k {
        let v = rng.random_range(0.1..0.9);
        if b.iter().all(|x: &f64| (x - v).abs() > 1e-3) {
            b.push(v);
        }
    }
    let (lo, hi) = (0.1f64.ln(), 10f64.ln());
    let h = (0..n).map(|_| rng.random_range(lo..=hi).exp()).collect();
    let mut inst = ConjectureInstance::new(b, h, 1.0)?;
    inst.feasibility_budget = 10.0 * inst.oracle()?.0;
    Ok(inst)
}

pub fn run_conjecture_sweep(
    dims: &[(usize, usize)],
    instances_per_dim: usize,
    seed: u64,
    restarts: usize,
    cfg: &ConjectureConfig,
) -> SweepReport {
    let mut records = Vec::new();
    let mut errors = Vec::new();
    let mut table = Vec::new();
    for &(n, k) in dims {
        let mut dim_records = Vec::new();
        for index in 0..instances_per_dim {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(((n as u64) << 48) | ((k as u64) << 32) | index as u64);
            let inst_seed: u64 = rng.random();
            let run = sample_instance(&mut rng, n, k).and_then(|inst| {
                let local = ConjectureConfig {
                    seed: inst_seed,
                    ..cfg.clone()
                };
                solve_min_trace(&inst, restarts, &local).map(|r| (inst, r))
            });
            match run {
                Ok((instance, result)) => {
                    let gap = result.trace / result.oracle_trace - 1.0;
                    let within = gap.abs() <= COUNTEREXAMPLE_MARGIN;
                    dim_records.push(SweepRecord {
                        n,
                        k,
                        index,
                        gap,
                        within_one_percent: within,
                        consistent: within && result.partition_structured,
                        candidate_counterexample: !result.partition_structured && gap < -COUNTEREXAMPLE_MARGIN,
                        instance,
                        result,
                    });
                }
                Err(e) => errors.push(format!("n={n} k={k} instance {index}: {e}")),
            }
        }
        let count = dim_records.len();
        let frac = |f: &dyn Fn(&SweepRecord) -> bool| {
            if count == 0 {
                0.0
            } else {
                dim_records.iter().filter(|r| f(r)).count() as f64 / count as f64
            }
        };
        table.push(DimSummary {
            n,
            k,
            instances: count,
            structured_fraction: frac(&|r| r.result.partition_structured),
            consistent_fraction: frac(&|r| r.consistent),
            max_abs_gap: dim_records.iter().map(|r| r.gap.abs()).fold(0.0, f64::max),
        });
        records.extend(dim_records);
    }
    let consistent_fraction = if records.is_empty() {
        0.0
    } else {
        records.iter().filter(|r| r.consistent).count() as f64 / records.len() as f64
    };
    let violations = records.iter().filter(|r| !r.consistent).cloned().collect();
    SweepReport {
        seed,
        restarts,
        table,
        consistent_fraction,
        records,
        violations,
        errors,
    }
}
