//! Dense linear-algebra kernels shared by every other module: spectral
//! utilities, PSD checks, stable Lyapunov solves and the coded-filter
//! Riccati recursion.

mod lyapunov;
mod riccati;

pub use lyapunov::{solve_stable_lyapunov, solve_stable_lyapunov_with, LyapunovMethod};
pub use riccati::{
    iterate_riccati, measurement_noise_of, riccati_step, verify_dare_fixed_point, RiccatiOutcome, RiccatiStatus,
};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Condition-number bound beyond which an SPD matrix is not inverted.
pub const CONDITION_BOUND: f64 = 1e12;

/// Relative asymmetry tolerated by routines that require symmetric input.
pub const SYMMETRY_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    /// Convergence threshold on the max-abs difference of successive iterates.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Trace level declaring divergence. `None` means `1e12 * trace(Q)`.
    pub divergence_trace_bound: Option<f64>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tolerance: 1e-10,
            max_iterations: 100_000,
            divergence_trace_bound: None,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0 && self.tolerance.is_finite()) {
            return Err(Error::Config(format!(
                "tolerance must be positive, got {}",
                self.tolerance
            )));
        }
        if self.max_iterations == 0 {
            return Err(Error::Config("max_iterations must be at least 1".into()));
        }
        if let Some(b) = self.divergence_trace_bound {
            if !(b > 0.0 && b.is_finite()) {
                return Err(Error::Config(format!(
                    "divergence_trace_bound must be positive and finite, got {b}"
                )));
            }
        }
        Ok(())
    }

    /// Divergence threshold for a recursion driven by process noise `q`.
    pub fn trace_bound_for(&self, q: &DMatrix<f64>) -> f64 {
        self.divergence_trace_bound
            .unwrap_or_else(|| 1e12 * q.trace().abs().max(f64::MIN_POSITIVE))
    }
}

pub fn ensure_square(m: &DMatrix<f64>, what: &str) -> Result<usize> {
    if m.nrows() != m.ncols() {
        return Err(Error::Dimension(format!(
            "{what} must be square, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(m.nrows())
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn check_symmetric(m: &DMatrix<f64>, what: &str) -> Result<()> {
    ensure_square(m, what)?;
    let scale = max_abs(m).max(1.0);
    let asym = max_abs(&(m - m.transpose()));
    if asym > SYMMETRY_TOLERANCE * scale {
        return Err(Error::Shape(format!(
            "{what} is not symmetric (max asymmetry {asym:e})"
        )));
    }
    Ok(())
}

/// Largest eigenvalue modulus.
pub fn spectral_radius(m: &DMatrix<f64>) -> Result<f64> {
    let n = ensure_square(m, "matrix")?;
    if n == 0 {
        return Ok(0.0);
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Dimension("matrix has non-finite entries".into()));
    }
    if is_diagonal(m) {
        return Ok(m.diagonal().iter().fold(0.0, |acc, v| acc.max(v.abs())));
    }
    Ok(m.complex_eigenvalues()
        .iter()
        .fold(0.0, |acc, z| acc.max(z.norm())))
}

pub fn is_diagonal(m: &DMatrix<f64>) -> bool {
    m.nrows() == m.ncols()
        && (0..m.nrows()).all(|i| (0..m.ncols()).all(|j| i == j || m[(i, j)] == 0.0))
}

/// Ascending eigenvalues of a symmetric matrix.
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> DVector<f64> {
    let mut ev = symmetrize(m).symmetric_eigenvalues();
    ev.as_mut_slice().sort_by(f64::total_cmp);
    ev
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    sym_eigenvalues(m)[0]
}

/// True iff the smallest eigenvalue of `m` is at least `-slack`.
pub fn is_psd(m: &DMatrix<f64>, slack: f64) -> Result<bool> {
    check_symmetric(m, "matrix")?;
    if m.nrows() == 0 {
        return Ok(true);
    }
    Ok(min_eigenvalue(m) >= -slack)
}

/// Eigenvalue-based square root of a symmetric PSD matrix. Negative
/// eigenvalues from round-off are clamped to zero.
pub fn sym_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    sym_spectral_map(m, |v| v.max(0.0).sqrt())
}

pub(crate) fn sym_spectral_map(m: &DMatrix<f64>, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let n = m.nrows();
    if n == 0 {
        return m.clone();
    }
    let eig = symmetrize(m).symmetric_eigen();
    // Sort eigenpairs so the result does not depend on solver ordering.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let mut out = DMatrix::zeros(n, n);
    for &i in &order {
        let v = eig.eigenvectors.column(i);
        out += v * v.transpose() * f(eig.eigenvalues[i]);
    }
    symmetrize(&out)
}

/// Condition number of a symmetric positive definite matrix; infinite when
/// the matrix is not positive definite.
pub fn spd_condition(m: &DMatrix<f64>) -> f64 {
    let ev = sym_eigenvalues(m);
    let lo = ev[0];
    let hi = ev[ev.len() - 1];
    if lo <= 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// Inverse of an SPD matrix, refused beyond [`CONDITION_BOUND`].
pub fn spd_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    ensure_square(m, "covariance")?;
    if m.nrows() == 0 {
        return Ok(m.clone());
    }
    let cond = spd_condition(m);
    if !(cond <= CONDITION_BOUND) {
        return Err(Error::IllConditioned(cond));
    }
    let chol = symmetrize(m)
        .cholesky()
        .ok_or(Error::IllConditioned(f64::INFINITY))?;
    Ok(symmetrize(&chol.inverse()))
}

pub fn is_positive_definite(m: &DMatrix<f64>) -> bool {
    m.nrows() == m.ncols()
        && m.iter().all(|v| v.is_finite())
        && (m.nrows() == 0 || min_eigenvalue(m) > 0.0)
}

pub fn kronecker(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.kronecker(b)
}

/// Numerical rank with a singular-value threshold relative to the largest
/// singular value.
pub fn numerical_rank(m: &DMatrix<f64>, rel_threshold: f64) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let sv = m.singular_values();
    let top = sv.iter().cloned().fold(0.0, f64::max);
    if top == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rel_threshold * top).count()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spectral_radius_examples() {
        assert_eq!(spectral_radius(&DMatrix::identity(3, 3)).unwrap(), 1.0);
        assert_eq!(spectral_radius(&DMatrix::zeros(2, 2)).unwrap(), 0.0);
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 0.5]));
        assert_eq!(spectral_radius(&d).unwrap(), 2.0);
        let rot = DMatrix::from_row_slice(2, 2, &[0.0, -1.5, 1.5, 0.0]);
        assert!((spectral_radius(&rot).unwrap() - 1.5).abs() < 1e-12);
    }

    #[test]
    fn spectral_radius_rejects_non_square() {
        let m = DMatrix::<f64>::zeros(2, 3);
        assert!(matches!(spectral_radius(&m), Err(Error::Dimension(_))));
    }

    #[test]
    fn psd_examples() {
        assert!(is_psd(&DMatrix::identity(3, 3), 0.0).unwrap());
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1.0]));
        assert!(!is_psd(&d, 1e-9).unwrap());
        let ones = DMatrix::from_element(3, 3, 1.0);
        assert!(is_psd(&ones, 1e-12).unwrap());
    }

    #[test]
    fn psd_rejects_asymmetric() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]);
        assert!(matches!(is_psd(&m, 0.0), Err(Error::Shape(_))));
    }

    #[test]
    fn spd_inverse_guards_conditioning() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 1e-14]));
        assert!(matches!(spd_inverse(&m), Err(Error::IllConditioned(_))));
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let inv = spd_inverse(&m).unwrap();
        assert!(max_abs(&(&m * inv - DMatrix::identity(2, 2))) < 1e-14);
    }

    #[test]
    fn sym_sqrt_squares_back() {
        let m = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]);
        let r = sym_sqrt(&m);
        assert!(max_abs(&(&r * &r - &m)) < 1e-12);
    }

    #[test]
    fn config_validation() {
        assert!(SolverConfig::default().validate().is_ok());
        let bad = SolverConfig {
            tolerance: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = SolverConfig {
            divergence_trace_bound: Some(f64::INFINITY),
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
