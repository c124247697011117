//! Innovations encoder, Kalman decoder and the partition-based encoder
//! construction.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{
    is_diagonal, iterate_riccati, max_abs, measurement_noise_of, min_eigenvalue, riccati_step, solve_stable_lyapunov,
    spd_condition, spd_inverse, sym_sqrt, symmetrize, SolverConfig, CONDITION_BOUND,
};
use crate::models::{DiagonalChannel, SourceModel};
use crate::stability::{partition_conditions_hold, Partition};

/// How the encoder turns the prediction error into a channel input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EncoderLaw {
    /// `X = Γ̃ P_t⁻¹ e` with the current prediction covariance `P_t`.
    #[default]
    Innovation,
    /// `X = Γ̃ P̄⁻¹ e` with a fixed anchor covariance `P̄`. At `P_t = P̄` this
    /// coincides with `Innovation`.
    Anchored { anchor: DMatrix<f64> },
    /// Row `i` of the gain is `c_i Γ̃_i`, with `c_i ≥ 0` chosen so that
    /// sub-channel `i` carries exactly `π_i`: `c_i² Γ̃_i P_t Γ̃_iᵀ = π_i`.
    PowerNormalized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderDesign {
    /// n x k encoder matrix.
    pub gamma_tilde: DMatrix<f64>,
    /// n x n dither covariance.
    pub omega: DMatrix<f64>,
    #[serde(default)]
    pub partition: Option<Partition>,
    #[serde(default)]
    pub pi: Option<Vec<f64>>,
    #[serde(default)]
    /// Per-channel encoder scales.
    pub alpha: Option<Vec<f64>>,
    #[serde(default)]
    pub law: EncoderLaw,
}

impl EncoderDesign {
    /// Innovation-law design without dither.
    pub fn innovation(gamma_tilde: DMatrix<f64>) -> Self {
        let n = gamma_tilde.nrows();
        Self {
            gamma_tilde,
            omega: DMatrix::zeros(n, n),
            partition: None,
            pi: None,
            alpha: None,
            law: EncoderLaw::Innovation,
        }
    }

    pub fn anchored(gamma_tilde: DMatrix<f64>, anchor: DMatrix<f64>) -> Result<Self> {
        let k = gamma_tilde.ncols();
        if anchor.nrows() != k || anchor.ncols() != k {
            return Err(Error::Dimension(format!(
                "anchor is {}x{}, expected {k}x{k}",
                anchor.nrows(),
                anchor.ncols()
            )));
        }
        let cond = spd_condition(&anchor);
        if !(cond <= CONDITION_BOUND) {
            return Err(Error::IllConditioned(cond));
        }
        Ok(Self {
            law: EncoderLaw::Anchored { anchor },
            ..Self::innovation(gamma_tilde)
        })
    }

    /// Power-normalized design with row directions `gamma_tilde` and
    /// per-channel powers `pi`.
    pub fn power_normalized(gamma_tilde: DMatrix<f64>, pi: Vec<f64>) -> Result<Self> {
        let d = Self {
            pi: Some(pi),
            law: EncoderLaw::PowerNormalized,
            ..Self::innovation(gamma_tilde)
        };
        d.validate()?;
        Ok(d)
    }

    /// Power-normalized design whose rows are the partition indicators.
    pub fn from_partition(partition: &Partition, pi: Vec<f64>, k: usize) -> Result<Self> {
        partition.validate(k)?;
        let mut d = Self::power_normalized(partition.indicator(k), pi)?;
        d.partition = Some(partition.clone());
        Ok(d)
    }

    pub fn with_omega(mut self, omega: DMatrix<f64>) -> Result<Self> {
        self.omega = omega;
        self.validate()?;
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.gamma_tilde.nrows()
    }

    pub fn k(&self) -> usize {
        self.gamma_tilde.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        if self.omega.nrows() != n || self.omega.ncols() != n {
            return Err(Error::Dimension(format!(
                "Omega is {}x{}, expected {n}x{n}",
                self.omega.nrows(),
                self.omega.ncols()
            )));
        }
        if self.gamma_tilde.iter().chain(self.omega.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Model("design has non-finite entries".into()));
        }
        let scale = max_abs(&self.omega).max(1.0);
        if max_abs(&(&self.omega - self.omega.transpose())) > 1e-9 * scale
            || (n > 0 && min_eigenvalue(&self.omega) < -1e-12 * scale)
        {
            return Err(Error::Model("Omega must be symmetric positive semidefinite".into()));
        }
        if let Some(pi) = &self.pi {
            if pi.len() != n {
                return Err(Error::Dimension(format!(
                    "pi has {} entries, expected {n}",
                    pi.len()
                )));
            }
            if pi.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(Error::Model("pi entries must be finite and nonnegative".into()));
            }
        } else if self.law == EncoderLaw::PowerNormalized {
            return Err(Error::Model("power-normalized design needs pi".into()));
        }
        if let Some(part) = &self.partition {
            if part.n() != n {
                return Err(Error::Partition(format!("partition has {} sets, expected {n}", part.n())));
            }
            part.validate(self.k())?;
        }
        if let EncoderLaw::Anchored { anchor } = &self.law {
            let k = self.k();
            if anchor.nrows() != k || anchor.ncols() != k {
                return Err(Error::Dimension(format!("anchor must be {k}x{k}")));
            }
        }
        Ok(())
    }

    pub fn check_dims(&self, k: usize, n: usize) -> Result<()> {
        if self.k() != k || self.n() != n {
            return Err(Error::Dimension(format!(
                "design is {}x{}, scenario needs {n}x{k}",
                self.n(),
                self.k()
            )));
        }
        self.validate()
    }

    /// Encoder gain `G(P)`, so that `X = G(P) e + M`.
    pub fn gain(&self, p: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        match &self.law {
            EncoderLaw::Innovation => Ok(&self.gamma_tilde * spd_inverse(p)?),
            EncoderLaw::Anchored { anchor } => Ok(&self.gamma_tilde * spd_inverse(anchor)?),
            EncoderLaw::PowerNormalized => {
                let pi = self
                    .pi
                    .as_ref()
                    .ok_or_else(|| Error::Model("power-normalized design needs pi".into()))?;
                let mut g = self.gamma_tilde.clone();
                for i in 0..self.n() {
                    let row = self.gamma_tilde.row(i);
                    let energy = (row * p * row.transpose())[(0, 0)];
                    let c = if pi[i] > 0.0 && energy > 0.0 {
                        (pi[i] / energy).sqrt()
                    } else {
                        0.0
                    };
                    g.row_mut(i).scale_mut(c);
                }
                Ok(g)
            }
        }
    }

    /// `Γ̃` as seen by the fixed-point equation at covariance `P`:
    /// `G(P) P`. Equals `gamma_tilde` for the innovation law.
    pub fn effective_gamma(&self, p: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        Ok(self.gain(p)? * p)
    }
}

/// Decoder state: prediction `Ŝ_t = E[S_t | Y^{t-1}]` and its error
/// covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterState {
    pub s_hat: DVector<f64>,
    pub p: DMatrix<f64>,
    pub t: u64,
}

impl FilterState {
    /// Zero prediction with covariance `Q`.
    pub fn initial(source: &SourceModel) -> Self {
        Self {
            s_hat: DVector::zeros(source.dim()),
            p: source.q.clone(),
            t: 0,
        }
    }
}

fn guard(p: &DMatrix<f64>) -> Result<()> {
    let cond = spd_condition(p);
    if !(cond <= CONDITION_BOUND) {
        return Err(Error::IllConditioned(cond));
    }
    Ok(())
}

/// `X_t = G(P_t) (s − Ŝ_t) + noise_draw`.
pub fn innovation_encode(
    design: &EncoderDesign,
    s: &DVector<f64>,
    state: &FilterState,
    noise_draw: &DVector<f64>,
) -> Result<DVector<f64>> {
    guard(&state.p)?;
    if s.len() != design.k() || state.s_hat.len() != design.k() || noise_draw.len() != design.n() {
        return Err(Error::Dimension("encoder inputs do not match the design".into()));
    }
    Ok(design.gain(&state.p)? * (s - &state.s_hat) + noise_draw)
}

/// Predictor gain `K = A P Cᵀ (C P Cᵀ + R)⁻¹` with `C = H G(P)` and
/// `R = I + H Ω Hᵀ`. For the innovation law this is
/// `A Γ̃ᵀ Hᵀ (H Γ̃ P⁻¹ Γ̃ᵀ Hᵀ + I + H Ω Hᵀ)⁻¹`.
pub fn predictor_gain(
    design: &EncoderDesign,
    source: &SourceModel,
    channel: &DiagonalChannel,
    p: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let c = channel.gain_matrix() * design.gain(p)?;
    let s = symmetrize(&(&c * p * c.transpose() + measurement_noise_of(channel, &design.omega)));
    let s_inv = s
        .cholesky()
        .ok_or(Error::IllConditioned(f64::INFINITY))?
        .inverse();
    Ok(&source.a * p * c.transpose() * s_inv)
}

/// One predict-update of the decoder given the canonical channel output `y`.
pub fn kalman_update(
    state: &FilterState,
    y: &DVector<f64>,
    design: &EncoderDesign,
    source: &SourceModel,
    channel: &DiagonalChannel,
) -> Result<FilterState> {
    guard(&state.p)?;
    design.check_dims(source.dim(), channel.inputs())?;
    if y.len() != channel.inputs() || state.s_hat.len() != source.dim() {
        return Err(Error::Dimension("observation or state has the wrong length".into()));
    }
    let k = predictor_gain(design, source, channel, &state.p)?;
    Ok(FilterState {
        s_hat: &source.a * &state.s_hat + k * y,
        p: riccati_step(source, channel, design, &state.p)?,
        t: state.t + 1,
    })
}

/// Average transmit power `Tr(G(P) P G(P)ᵀ + Ω)`, i.e. `Tr(Γ̃P⁻¹Γ̃ᵀ + Ω)`
/// for the innovation law.
pub fn transmit_power(design: &EncoderDesign, p: &DMatrix<f64>) -> Result<f64> {
    guard(p)?;
    if p.nrows() != design.k() || p.ncols() != design.k() {
        return Err(Error::Dimension(format!("P must be {0}x{0}", design.k())));
    }
    let g = design.gain(p)?;
    Ok((&g * p * g.transpose()).trace() + design.omega.trace())
}

/// Per-sub-channel powers `diag(G P Gᵀ + Ω)`.
pub fn channel_powers(design: &EncoderDesign, p: &DMatrix<f64>) -> Result<Vec<f64>> {
    let g = design.gain(p)?;
    let m = &g * p * g.transpose() + &design.omega;
    Ok(m.diagonal().iter().cloned().collect())
}

/// Relative slack allowed when comparing a design's power to its budget.
const POWER_SLACK: f64 = 1e-9;
const ALPHA_MAX_DOUBLINGS: u32 = 32;
const ALPHA_BISECTIONS: u32 = 30;

/// Candidate design for per-channel scales: `Γ̃ = diag(α) Π^{1/2} Γ̄`,
/// anchored at the solution of
/// `P = A P Aᵀ + Q − A Γ̃ᵀH(I + HΠH)⁻¹HΓ̃ Aᵀ`.
fn candidate(
    alpha: &[f64],
    base: &DMatrix<f64>,
    pi_diag: &DMatrix<f64>,
    source: &SourceModel,
    channel: &DiagonalChannel,
) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
    let gamma = DMatrix::from_diagonal(&DVector::from_column_slice(alpha)) * base;
    let h = channel.gain_matrix();
    let n = channel.inputs();
    let a = &source.a;
    let inner = (DMatrix::identity(n, n) + &h * pi_diag * &h).try_inverse()?;
    let w = &source.q - a * gamma.transpose() * &h * inner * &h * &gamma * a.transpose();
    let a_inv = a.clone().try_inverse()?;
    let forcing = -(&a_inv * w * a_inv.transpose());
    let anchor = solve_stable_lyapunov(&a_inv, &symmetrize(&forcing)).ok()?;
    if anchor.iter().any(|v| !v.is_finite()) || spd_condition(&anchor) > CONDITION_BOUND {
        return None;
    }
    Some((gamma, anchor))
}

/// Converged design and steady state for the given scales, if every
/// channel power stays within its allocation (`per_channel`) or the total
/// stays within `Σπ`.
#[allow(clippy::too_many_arguments)]
fn evaluate(
    alpha: &[f64],
    base: &DMatrix<f64>,
    partition: &Partition,
    pi: &[f64],
    source: &SourceModel,
    channel: &DiagonalChannel,
    cfg: &SolverConfig,
    per_channel: bool,
) -> Option<EncoderDesign> {
    let pi_diag = DMatrix::from_diagonal(&DVector::from_column_slice(pi));
    let (gamma, anchor) = candidate(alpha, base, &pi_diag, source, channel)?;
    let mut d = EncoderDesign::anchored(gamma, anchor).ok()?;
    d.partition = Some(partition.clone());
    d.pi = Some(pi.to_vec());
    d.alpha = Some(alpha.to_vec());
    let p = iterate_riccati(source, channel, &d, cfg).ok()?.p?;
    let ok = if per_channel {
        let powers = channel_powers(&d, &p).ok()?;
        powers.iter().zip(pi).all(|(got, cap)| *got <= cap * (1.0 + POWER_SLACK))
    } else {
        transmit_power(&d, &p).ok()? <= pi.iter().sum::<f64>() * (1.0 + POWER_SLACK)
    };
    ok.then_some(d)
}

/// Smallest common scale in `[1, 2³²]` accepted by `accept`, refined by
/// bisection.
fn scale_search<T>(accept: impl Fn(f64) -> Option<T>) -> Option<(f64, T)> {
    let mut lo = None;
    let mut found = None;
    let mut alpha = 1.0;
    for _ in 0..=ALPHA_MAX_DOUBLINGS {
        if let Some(hit) = accept(alpha) {
            found = Some((alpha, hit));
            break;
        }
        lo = Some(alpha);
        alpha *= 2.0;
    }
    let (mut hi, mut best) = found?;
    if let Some(mut lo) = lo {
        for _ in 0..ALPHA_BISECTIONS {
            let mid = 0.5 * (lo + hi);
            match accept(mid) {
                Some(hit) => {
                    hi = mid;
                    best = hit;
                }
                None => lo = mid,
            }
        }
    }
    Some((hi, best))
}

/// True when the sets do not interact: diagonal `A` and `Q` zero between
/// modes of different sets.
fn decouples(partition: &Partition, source: &SourceModel) -> bool {
    if !is_diagonal(&source.a) {
        return false;
    }
    let mut owner = vec![0; source.dim()];
    for (i, set) in partition.sets.iter().enumerate() {
        for &j in set {
            owner[j] = i;
        }
    }
    (0..source.dim()).all(|r| (0..source.dim()).all(|c| owner[r] == owner[c] || source.q[(r, c)] == 0.0))
}

/// Scale for one set on its own: the modes of `set` over sub-channel `i`.
fn set_scale(
    i: usize,
    set: &[usize],
    pi: f64,
    source: &SourceModel,
    channel: &DiagonalChannel,
    cfg: &SolverConfig,
) -> Option<f64> {
    let lambdas: Vec<f64> = set.iter().map(|&j| source.a[(j, j)]).collect();
    let q = DMatrix::from_fn(set.len(), set.len(), |r, c| source.q[(set[r], set[c])]);
    let sub_source = SourceModel::diagonal(&lambdas, q).ok()?;
    let sub_channel = DiagonalChannel::from_gains(&channel.gains[i..=i]).ok()?;
    let sub_partition = Partition::single(set.len(), 1, 0);
    let base = DMatrix::from_element(1, set.len(), pi.sqrt());
    scale_search(|a| {
        evaluate(&[a], &base, &sub_partition, &[pi], &sub_source, &sub_channel, cfg, false)
    })
    .map(|(a, _)| a)
}

/// Builds an anchored encoder for `partition` and allocation `pi`.
///
/// When the sets decouple, each channel gets its own smallest scale in
/// `[1, 2³²]`, so every channel stays within its own `π_i`. Otherwise a
/// common scale is searched and only the total `Σπ` is enforced.
pub fn build_partition_encoder(
    partition: &Partition,
    pi: &[f64],
    source: &SourceModel,
    channel: &DiagonalChannel,
    cfg: &SolverConfig,
) -> Result<EncoderDesign> {
    let k = source.dim();
    let n = channel.inputs();
    if partition.n() != n || pi.len() != n {
        return Err(Error::Dimension(format!(
            "partition has {} sets and pi {} entries; channel has {n} inputs",
            partition.n(),
            pi.len()
        )));
    }
    partition.validate(k)?;
    if pi.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::Model("pi entries must be finite and nonnegative".into()));
    }
    if !partition_conditions_hold(partition, pi, &source.mode_moduli(), &channel.gains) {
        return Err(Error::InfeasiblePartition(format!(
            "allocation {pi:?} does not meet the rate condition of partition {:?}",
            partition.sets
        )));
    }
    let pi_diag = DMatrix::from_diagonal(&DVector::from_column_slice(pi));
    let base = sym_sqrt(&pi_diag) * partition.indicator(k);

    if decouples(partition, source) {
        let scales: Option<Vec<f64>> = partition
            .sets
            .iter()
            .enumerate()
            .map(|(i, set)| if set.is_empty() { Some(1.0) } else { set_scale(i, set, pi[i], source, channel, cfg) })
            .collect();
        if let Some(d) = scales.and_then(|a| evaluate(&a, &base, partition, pi, source, channel, cfg, true)) {
            return Ok(d);
        }
    }
    scale_search(|a| evaluate(&vec![a; n], &base, partition, pi, source, channel, cfg, false))
        .map(|(_, d)| d)
        .ok_or_else(|| {
            Error::ConstructionFailed("no scale in [1, 2^32] yields a convergent, power-feasible design".into())
        })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    fn v(x: f64) -> DVector<f64> {
        DVector::from_element(1, x)
    }

    fn scalar() -> (SourceModel, DiagonalChannel) {
        (
            SourceModel::diagonal(&[2.0], m(1.0)).unwrap(),
            DiagonalChannel::from_gains(&[1.0]).unwrap(),
        )
    }

    #[test]
    fn encode_examples() {
        let d = EncoderDesign::innovation(m(2.0));
        let st = FilterState {
            s_hat: v(0.0),
            p: m(4.0),
            t: 0,
        };
        assert_eq!(innovation_encode(&d, &v(1.0), &st, &v(0.0)).unwrap()[0], 0.5);
        assert_eq!(innovation_encode(&d, &v(0.0), &st, &v(0.0)).unwrap()[0], 0.0);
    }

    #[test]
    fn zero_encoder_runs_open_loop() {
        let (src, ch) = scalar();
        let d = EncoderDesign::innovation(m(0.0));
        let st = FilterState {
            s_hat: v(1.5),
            p: m(2.0),
            t: 0,
        };
        let next = kalman_update(&st, &v(0.7), &d, &src, &ch).unwrap();
        assert_eq!(next.s_hat[0], 3.0);
        assert!((next.p[(0, 0)] - 9.0).abs() < 1e-12);
        assert_eq!(next.t, 1);
    }

    #[test]
    fn fixed_point_persists() {
        let (src, ch) = scalar();
        let d = EncoderDesign::anchored(m(15f64.sqrt()), m(3.0)).unwrap();
        let mut st = FilterState {
            s_hat: v(0.0),
            p: m(3.0),
            t: 0,
        };
        for _ in 0..5 {
            st = kalman_update(&st, &v(0.1), &d, &src, &ch).unwrap();
            assert!((st.p[(0, 0)] - 3.0).abs() < 1e-12);
        }
        // K = a γ h / (h² γ² / P + 1) = 2 √15 / 6
        let k = predictor_gain(&d, &src, &ch, &m(3.0)).unwrap();
        assert!((k[(0, 0)] - 2.0 * 15f64.sqrt() / 6.0).abs() < 1e-12);
    }

    #[test]
    fn power_examples() {
        let zero = EncoderDesign::innovation(DMatrix::zeros(2, 2));
        assert_eq!(transmit_power(&zero, &DMatrix::identity(2, 2)).unwrap(), 0.0);
        let dith = zero.with_omega(DMatrix::identity(2, 2) * 0.5).unwrap();
        assert!((transmit_power(&dith, &DMatrix::identity(2, 2)).unwrap() - 1.0).abs() < 1e-15);
        let d = EncoderDesign::innovation(m(15f64.sqrt()));
        assert!((transmit_power(&d, &m(3.0)).unwrap() - 5.0).abs() < 1e-12);
    }

    #[test]
    fn indefinite_dither_rejected() {
        let d = EncoderDesign::innovation(DMatrix::zeros(2, 2));
        let om = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1.0]));
        assert!(d.with_omega(om).is_err());
    }

    #[test]
    fn partition_encoder_scalar() {
        let (src, ch) = scalar();
        let part = Partition::new(vec![vec![0]], 1).unwrap();
        let d = build_partition_encoder(&part, &[5.0], &src, &ch, &SolverConfig::default()).unwrap();
        let out = iterate_riccati(&src, &ch, &d, &SolverConfig::default()).unwrap();
        let p = out.p.unwrap();
        assert!((p[(0, 0)] - 3.0).abs() < 1e-4, "{p}");
        assert!(transmit_power(&d, &p).unwrap() <= 5.0 * (1.0 + 1e-9));
        assert!((d.gamma_tilde[(0, 0)].powi(2) - 15.0).abs() < 1e-3);
    }

    #[test]
    fn partition_encoder_rejects_infeasible() {
        let src = SourceModel::diagonal(&[2.0, 3.0], DMatrix::identity(2, 2)).unwrap();
        let ch = DiagonalChannel::from_gains(&[1.0, 1.0]).unwrap();
        let part = Partition::new(vec![vec![], vec![0, 1]], 2).unwrap();
        let err = build_partition_encoder(&part, &[0.0, 10.0], &src, &ch, &SolverConfig::default());
        assert!(matches!(err, Err(Error::InfeasiblePartition(_))));
    }
}
