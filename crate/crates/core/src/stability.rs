//! Feasibility theory for linear coded filters: per-set power thresholds,
//! exhaustive partition search, closed-form scalar conditions and
//! water-filling capacities. Capacities are in nats.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{DiagonalChannel, Scenario, SourceModel};

/// Default cap on the number of mode-to-channel assignments enumerated.
pub const DEFAULT_ENUMERATION_BUDGET: u64 = 10_000_000;

/// Tolerance used by [`is_matched`].
pub const MATCH_TOLERANCE: f64 = 1e-6;

/// Assignment of the `k` source modes (0-based) to `n` sub-channels.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Partition {
    pub sets: Vec<Vec<usize>>,
}

impl Partition {
    /// Validates that `sets` partitions `0..k`. Empty sets are allowed.
    pub fn new(sets: Vec<Vec<usize>>, k: usize) -> Result<Self> {
        let p = Self { sets };
        p.validate(k)?;
        Ok(p)
    }

    pub fn validate(&self, k: usize) -> Result<()> {
        let mut seen = vec![false; k];
        for (i, set) in self.sets.iter().enumerate() {
            for &j in set {
                if j >= k {
                    return Err(Error::Partition(format!(
                        "set {i} contains mode {j}, but the source has {k} modes"
                    )));
                }
                if seen[j] {
                    return Err(Error::Partition(format!("mode {j} appears more than once")));
                }
                seen[j] = true;
            }
        }
        if let Some(j) = seen.iter().position(|s| !s) {
            return Err(Error::Partition(format!("mode {j} is not assigned to any set")));
        }
        Ok(())
    }

    /// `assignment[j]` is the channel receiving mode `j`.
    pub fn from_assignment(assignment: &[usize], n: usize) -> Self {
        let mut sets = vec![Vec::new(); n];
        for (j, &i) in assignment.iter().enumerate() {
            sets[i].push(j);
        }
        Self { sets }
    }

    /// All modes on channel `channel`.
    pub fn single(k: usize, n: usize, channel: usize) -> Self {
        Self::from_assignment(&vec![channel; k], n)
    }

    pub fn n(&self) -> usize {
        self.sets.len()
    }

    /// n x k 0/1 indicator matrix.
    pub fn indicator(&self, k: usize) -> nalgebra::DMatrix<f64> {
        let mut m = nalgebra::DMatrix::zeros(self.n(), k);
        for (i, set) in self.sets.iter().enumerate() {
            for &j in set {
                m[(i, j)] = 1.0;
            }
        }
        m
    }

    pub fn used_channels(&self) -> Vec<usize> {
        (0..self.n()).filter(|&i| !self.sets[i].is_empty()).collect()
    }
}

/// `(∏_{j∈S} |λ_j|² − 1) / h²`: the infimum of the power a sub-channel of
/// gain `h` needs to carry the modes in `set`.
pub fn min_power_for_set(set: &[usize], h: f64, lambdas: &[f64]) -> f64 {
    if set.is_empty() {
        return 0.0;
    }
    if h <= 0.0 {
        return f64::INFINITY;
    }
    let prod: f64 = set.iter().map(|&j| lambdas[j] * lambdas[j]).product();
    (prod - 1.0) / (h * h)
}

/// `½ log(1 + h² π)` in nats.
pub fn sub_channel_capacity(h: f64, pi: f64) -> f64 {
    0.5 * (h * h * pi).ln_1p()
}

/// Per-set rate condition `Σ_{j∈S} log|λ_j| < ½log(1 + h²π)` for every
/// nonempty set. Budget is not checked.
pub fn partition_conditions_hold(
    partition: &Partition,
    pi: &[f64],
    lambdas: &[f64],
    gains: &[f64],
) -> bool {
    partition.sets.iter().enumerate().all(|(i, set)| {
        set.is_empty() || {
            let rate: f64 = set.iter().map(|&j| lambdas[j].ln()).sum();
            rate < sub_channel_capacity(gains[i], pi[i])
        }
    })
}

fn check_shapes(partition: &Partition, pi: &[f64], scenario: &Scenario) -> Result<()> {
    let n = scenario.n();
    if partition.n() != n {
        return Err(Error::Partition(format!(
            "partition has {} sets, channel has {n} inputs",
            partition.n()
        )));
    }
    if pi.len() != n {
        return Err(Error::Dimension(format!(
            "allocation has {} entries, channel has {n} inputs",
            pi.len()
        )));
    }
    if pi.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::Model("power allocation entries must be finite and nonnegative".into()));
    }
    partition.validate(scenario.k())
}

/// True iff `Σπ ≤ p` and every nonempty set meets its rate condition strictly.
pub fn check_partition(partition: &Partition, pi: &[f64], scenario: &Scenario) -> Result<bool> {
    check_shapes(partition, pi, scenario)?;
    let total: f64 = pi.iter().sum();
    Ok(total <= scenario.power
        && partition_conditions_hold(
            partition,
            pi,
            &scenario.source.mode_moduli(),
            &scenario.channel.gains,
        ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub feasible: bool,
    pub best_partition: Partition,
    /// Minimum per-set powers of `best_partition`.
    pub set_powers: Vec<f64>,
    pub min_power: f64,
    pub shannon_capacity_at_p: f64,
    pub linear_capacity_at_p: f64,
    /// `Σ log|λ_j|` in nats.
    pub source_rate: f64,
    pub matched: bool,
    pub margin: f64,
}

/// Calls `f` on every assignment of `k` modes to `n` channels in
/// lexicographic order (mode 0 most significant).
fn for_each_assignment(k: usize, n: usize, budget: u64, mut f: impl FnMut(&[usize])) -> Result<()> {
    let count = (n as f64).powi(k as i32);
    if count > budget as f64 {
        return Err(Error::BudgetExceeded(format!(
            "{n}^{k} = {count:e} assignments exceed the budget of {budget}"
        )));
    }
    if n == 0 {
        return Err(Error::Model("channel has no inputs".into()));
    }
    let mut asg = vec![0usize; k];
    loop {
        f(&asg);
        let mut pos = k;
        loop {
            if pos == 0 {
                return Ok(());
            }
            pos -= 1;
            asg[pos] += 1;
            if asg[pos] < n {
                break;
            }
            asg[pos] = 0;
        }
    }
}

/// Exhaustive minimum of `Σ_i min_power_for_set(S_i)` over assignments.
/// Returns `(min_power, best partition, per-set powers)`.
pub fn partition_minimum(
    lambdas: &[f64],
    gains: &[f64],
    budget: u64,
) -> Result<(f64, Partition, Vec<f64>)> {
    let n = gains.len();
    let k = lambdas.len();
    let sq: Vec<f64> = lambdas.iter().map(|l| l * l).collect();
    let inv_h2: Vec<f64> = gains
        .iter()
        .map(|&h| if h > 0.0 { 1.0 / (h * h) } else { f64::INFINITY })
        .collect();
    let mut best = (f64::INFINITY, vec![0usize; k]);
    let mut prod = vec![1.0; n];
    let mut used = vec![false; n];
    for_each_assignment(k, n, budget, |asg| {
        prod.iter_mut().for_each(|v| *v = 1.0);
        used.iter_mut().for_each(|v| *v = false);
        for (j, &i) in asg.iter().enumerate() {
            prod[i] *= sq[j];
            used[i] = true;
        }
        let total: f64 = (0..n)
            .filter(|&i| used[i])
            .map(|i| (prod[i] - 1.0) * inv_h2[i])
            .sum();
        if total < best.0 {
            best = (total, asg.to_vec());
        }
    })?;
    let partition = Partition::from_assignment(&best.1, n);
    let powers = partition
        .sets
        .iter()
        .zip(gains)
        .map(|(s, &h)| min_power_for_set(s, h, lambdas))
        .collect();
    Ok((best.0, partition, powers))
}

/// Minimum total power over all partitions, with capacities and the
/// matching verdict at the scenario's budget.
pub fn min_linear_power(scenario: &Scenario) -> Result<StabilityReport> {
    min_linear_power_with_budget(scenario, DEFAULT_ENUMERATION_BUDGET)
}

pub fn min_linear_power_with_budget(scenario: &Scenario, budget: u64) -> Result<StabilityReport> {
    let lambdas = scenario.source.mode_moduli();
    let gains = &scenario.channel.gains;
    let (min_power, best_partition, set_powers) = partition_minimum(&lambdas, gains, budget)?;
    let (shannon, _) = shannon_capacity(&scenario.channel, scenario.power);
    let linear = linear_capacity_with_budget(scenario, budget)?;
    let source_rate = scenario.source.sum_log_moduli();
    Ok(StabilityReport {
        feasible: min_power < scenario.power,
        best_partition,
        set_powers,
        min_power,
        shannon_capacity_at_p: shannon,
        linear_capacity_at_p: linear,
        source_rate,
        matched: matched_from(source_rate, linear, shannon),
        margin: scenario.power - min_power,
    })
}

fn single_channel(channel: &DiagonalChannel) -> Result<f64> {
    if channel.inputs() != 1 {
        return Err(Error::Shape(format!(
            "scalar-channel condition needs n = 1, got n = {}",
            channel.inputs()
        )));
    }
    Ok(channel.gains[0])
}

/// `1 + h²p > |det A_u|²` for a single sub-channel.
pub fn scalar_channel_condition(source: &SourceModel, channel: &DiagonalChannel, p: f64) -> Result<bool> {
    let h = single_channel(channel)?;
    let det_sq: f64 = source.moduli().iter().map(|m| m * m).product();
    Ok(1.0 + h * h * p > det_sq)
}

/// `log|λ| < ½log(1 + h₁²p)` for a scalar source; `h₁` is the largest gain.
pub fn scalar_source_condition(source: &SourceModel, channel: &DiagonalChannel, p: f64) -> Result<bool> {
    if source.dim() != 1 {
        return Err(Error::Shape(format!(
            "scalar-source condition needs k = 1, got k = {}",
            source.dim()
        )));
    }
    Ok(source.moduli()[0].ln() < sub_channel_capacity(channel.best_gain(), p))
}

/// Water-filling allocation `p_i = max(floor_i, μ − b_i)` with `Σp_i = total`.
/// Entries with infinite `b_i` receive their floor. Requires
/// `Σ floor_i ≤ total`.
pub fn water_fill(b: &[f64], floors: &[f64], total: f64) -> Vec<f64> {
    let alloc = |mu: f64| -> Vec<f64> {
        b.iter()
            .zip(floors)
            .map(|(&bi, &fi)| if bi.is_finite() { fi.max(mu - bi) } else { fi })
            .collect()
    };
    let sum_at = |mu: f64| alloc(mu).iter().sum::<f64>();
    let finite: Vec<f64> = b.iter().cloned().filter(|v| v.is_finite()).collect();
    if finite.is_empty() || total <= floors.iter().sum::<f64>() {
        return floors.to_vec();
    }
    let mut lo = b
        .iter()
        .zip(floors)
        .filter(|(bi, _)| bi.is_finite())
        .map(|(bi, fi)| bi + fi)
        .fold(f64::INFINITY, f64::min)
        .min(0.0);
    let mut hi = finite.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        + floors.iter().cloned().fold(0.0, f64::max)
        + total;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if sum_at(mid) < total {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi.abs().max(1.0) {
            break;
        }
    }
    // Close the remaining gap exactly on the active set.
    let mu = 0.5 * (lo + hi);
    let mut out = alloc(mu);
    let active: Vec<usize> = (0..b.len())
        .filter(|&i| b[i].is_finite() && mu - b[i] > floors[i])
        .collect();
    if !active.is_empty() {
        let excess = (total - out.iter().sum::<f64>()) / active.len() as f64;
        for &i in &active {
            out[i] += excess;
        }
    }
    out
}

/// MIMO Shannon capacity `max Σ ½log(1 + h_i²p_i)` s.t. `Σp_i = p`, with the
/// water-filling allocation.
pub fn shannon_capacity(channel: &DiagonalChannel, p: f64) -> (f64, Vec<f64>) {
    let n = channel.inputs();
    if p <= 0.0 || channel.gains.iter().all(|&h| h <= 0.0) {
        return (0.0, vec![0.0; n]);
    }
    let b: Vec<f64> = channel
        .gains
        .iter()
        .map(|&h| if h > 0.0 { 1.0 / (h * h) } else { f64::INFINITY })
        .collect();
    let alloc = water_fill(&b, &vec![0.0; n], p);
    let cap = channel
        .gains
        .iter()
        .zip(&alloc)
        .map(|(&h, &pi)| sub_channel_capacity(h, pi))
        .sum();
    (cap, alloc)
}

/// Supremum of `Σ C_i(π_i)` over partitions and allocations with each
/// nonempty set at or above its minimum power and `Σπ ≤ p`. Slack power is
/// water-filled over the used sub-channels. `−∞` when nothing qualifies.
pub fn linear_capacity(scenario: &Scenario) -> Result<f64> {
    linear_capacity_with_budget(scenario, DEFAULT_ENUMERATION_BUDGET)
}

pub fn linear_capacity_with_budget(scenario: &Scenario, budget: u64) -> Result<f64> {
    let lambdas = scenario.source.mode_moduli();
    let gains = &scenario.channel.gains;
    let n = gains.len();
    let p = scenario.power;
    let mut best = f64::NEG_INFINITY;
    // Only the used-channel set and the per-channel minima matter, so
    // identical configurations are evaluated once.
    let mut cache: std::collections::HashMap<Vec<u64>, f64> = std::collections::HashMap::new();
    for_each_assignment(lambdas.len(), n, budget, |asg| {
        let part = Partition::from_assignment(asg, n);
        let mins: Vec<f64> = part
            .sets
            .iter()
            .zip(gains)
            .map(|(s, &h)| min_power_for_set(s, h, &lambdas))
            .collect();
        if !(mins.iter().sum::<f64>() <= p) {
            return;
        }
        let key: Vec<u64> = part
            .sets
            .iter()
            .zip(&mins)
            .map(|(s, m)| if s.is_empty() { u64::MAX } else { m.to_bits() })
            .collect();
        let value = *cache.entry(key).or_insert_with(|| {
            let used = part.used_channels();
            let b: Vec<f64> = used.iter().map(|&i| 1.0 / (gains[i] * gains[i])).collect();
            let floors: Vec<f64> = used.iter().map(|&i| mins[i]).collect();
            let alloc = water_fill(&b, &floors, p);
            used.iter()
                .zip(&alloc)
                .map(|(&i, &pi)| sub_channel_capacity(gains[i], pi))
                .sum()
        });
        if value > best {
            best = value;
        }
    })?;
    Ok(best)
}

fn matched_from(source_rate: f64, linear: f64, shannon: f64) -> bool {
    linear.is_finite()
        && (source_rate - linear).abs() <= MATCH_TOLERANCE
        && (linear - shannon).abs() <= MATCH_TOLERANCE
}

/// Source rate, linear capacity and Shannon capacity coincide at budget `p`.
pub fn is_matched(scenario: &Scenario) -> Result<bool> {
    let linear = linear_capacity(scenario)?;
    let (shannon, _) = shannon_capacity(&scenario.channel, scenario.power);
    Ok(matched_from(scenario.source.sum_log_moduli(), linear, shannon))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    /// Best single sub-channel capacity `max_i C_i(p)`.
    pub linear_threshold_capacity: f64,
    pub shannon: f64,
    pub ratio: f64,
}

/// Compares the best single-channel capacity, which bounds what linear
/// codes achieve for a scalar source, with the MIMO Shannon capacity.
pub fn suboptimality_gap(channel: &DiagonalChannel, p: f64) -> GapReport {
    let linear = sub_channel_capacity(channel.best_gain(), p.max(0.0));
    let (shannon, _) = shannon_capacity(channel, p);
    let ratio = if shannon > 0.0 { linear / shannon } else { 1.0 };
    GapReport {
        linear_threshold_capacity: linear,
        shannon,
        ratio,
    }
}

/// Power at which a linear code can begin to stabilize a scalar source:
/// `(λ² − 1)/h₁²`.
pub fn linear_threshold_power(lambda: f64, channel: &DiagonalChannel) -> f64 {
    min_power_for_set(&[0], channel.best_gain(), &[lambda.abs()])
}

/// Smallest `p` with `C(p) ≥ log|λ|`, the capacity (converse) threshold.
pub fn shannon_threshold_power(lambda: f64, channel: &DiagonalChannel) -> f64 {
    let target = lambda.abs().ln();
    if target <= 0.0 {
        return 0.0;
    }
    let mut hi = linear_threshold_power(lambda, channel);
    if !hi.is_finite() {
        return f64::INFINITY;
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if shannon_capacity(channel, mid).0 >= target {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}
