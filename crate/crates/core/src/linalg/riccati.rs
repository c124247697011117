use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{max_abs, spd_condition, symmetrize, SolverConfig, CONDITION_BOUND};
use crate::coded_kf::EncoderDesign;
use crate::error::{Error, Result};
use crate::models::{DiagonalChannel, SourceModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RiccatiStatus {
    Converged,
    Diverged,
    MaxIterations,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiccatiOutcome {
    pub status: RiccatiStatus,
    /// Fixed point; present iff `status` is `Converged`.
    pub p: Option<DMatrix<f64>>,
    pub iterations: usize,
}

impl RiccatiOutcome {
    pub fn converged(&self) -> bool {
        self.status == RiccatiStatus::Converged
    }
}

/// One step of the prediction-error covariance recursion:
/// `P⁺ = A (P⁻¹ + Cᵀ R⁻¹ C)⁻¹ Aᵀ + Q` with `C = H G(P)` and
/// `R = I + H Ω Hᵀ`, where `G(P)` is the encoder gain of `design` at `P`.
///
/// The posterior is formed as `L (I + Lᵀ Cᵀ R⁻¹ C L)⁻¹ Lᵀ` with `P = L Lᵀ`,
/// which never inverts `P` and keeps the update positive definite.
pub fn riccati_step(
    source: &SourceModel,
    channel: &DiagonalChannel,
    design: &EncoderDesign,
    p: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let k = source.dim();
    design.check_dims(k, channel.inputs())?;
    if p.nrows() != k || p.ncols() != k {
        return Err(Error::Dimension(format!(
            "P is {}x{}, expected {k}x{k}",
            p.nrows(),
            p.ncols()
        )));
    }
    let g = design.gain(p)?;
    let h = channel.gain_matrix();
    let c = &h * g;
    let r_inv = measurement_noise_of(channel, &design.omega)
        .cholesky()
        .ok_or(Error::IllConditioned(f64::INFINITY))?
        .inverse();
    let l = symmetrize(p)
        .cholesky()
        .ok_or(Error::IllConditioned(f64::INFINITY))?
        .l();
    let cl = &c * &l;
    let inner = DMatrix::identity(k, k) + cl.transpose() * &r_inv * &cl;
    let inner_inv = symmetrize(&inner)
        .cholesky()
        .ok_or(Error::IllConditioned(f64::INFINITY))?
        .inverse();
    let post = &l * inner_inv * l.transpose();
    Ok(symmetrize(&(&source.a * post * source.a.transpose() + &source.q)))
}

/// `I + H Ω Hᵀ`.
pub fn measurement_noise_of(channel: &DiagonalChannel, omega: &DMatrix<f64>) -> DMatrix<f64> {
    let n = channel.inputs();
    let h = channel.gain_matrix();
    DMatrix::identity(n, n) + &h * omega * &h
}

/// Runs the recursion from `P₀ = Q` and classifies the outcome.
pub fn iterate_riccati(
    source: &SourceModel,
    channel: &DiagonalChannel,
    design: &EncoderDesign,
    cfg: &SolverConfig,
) -> Result<RiccatiOutcome> {
    cfg.validate()?;
    design.check_dims(source.dim(), channel.inputs())?;
    let bound = cfg.trace_bound_for(&source.q);
    let diverged = |iterations| RiccatiOutcome {
        status: RiccatiStatus::Diverged,
        p: None,
        iterations,
    };

    let mut p = source.q.clone();
    for it in 1..=cfg.max_iterations {
        let next = match riccati_step(source, channel, design, &p) {
            Ok(next) => next,
            // A growing covariance eventually loses invertibility; since
            // P ⪰ Q this only happens far beyond any finite fixed point.
            Err(Error::IllConditioned(_)) => return Ok(diverged(it)),
            Err(e) => return Err(e),
        };
        if next.iter().any(|v| !v.is_finite()) || next.trace() > bound {
            return Ok(diverged(it));
        }
        let diff = max_abs(&(&next - &p));
        p = next;
        if diff <= cfg.tolerance * max_abs(&p).max(1.0) {
            return Ok(RiccatiOutcome {
                status: RiccatiStatus::Converged,
                p: Some(p),
                iterations: it,
            });
        }
    }
    Ok(RiccatiOutcome {
        status: RiccatiStatus::MaxIterations,
        p: None,
        iterations: cfg.max_iterations,
    })
}

/// Max-abs residual `|P − step(P)|` of the fixed-point equation at `P`.
pub fn verify_dare_fixed_point(
    p: &DMatrix<f64>,
    source: &SourceModel,
    channel: &DiagonalChannel,
    design: &EncoderDesign,
) -> Result<f64> {
    let cond = spd_condition(p);
    if !(cond <= CONDITION_BOUND) {
        return Err(Error::IllConditioned(cond));
    }
    let next = riccati_step(source, channel, design, p)?;
    Ok(max_abs(&(p - next)))
}
