use nalgebra::{DMatrix, DVector};

use super::{ensure_square, is_diagonal, max_abs, spectral_radius, symmetrize, SolverConfig};
use crate::error::{Error, Result};

/// Largest dimension solved through the vectorized (Kronecker) system.
const KRONECKER_MAX_DIM: usize = 8;
/// `F^(2^64)` underflows for any spectral radius below one that is not
/// within rounding of it.
const DOUBLING_MAX_STEPS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LyapunovMethod {
    /// Kronecker vectorization up to dimension 8, doubling iteration above.
    #[default]
    Auto,
    Kronecker,
    FixedPoint,
}

/// Solves `X = F X Fᵀ + Q` for a stable `F` (spectral radius < 1).
pub fn solve_stable_lyapunov(f: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    solve_stable_lyapunov_with(f, q, LyapunovMethod::Auto, &SolverConfig::default())
}

pub fn solve_stable_lyapunov_with(
    f: &DMatrix<f64>,
    q: &DMatrix<f64>,
    method: LyapunovMethod,
    cfg: &SolverConfig,
) -> Result<DMatrix<f64>> {
    let k = ensure_square(f, "F")?;
    if q.nrows() != k || q.ncols() != k {
        return Err(Error::Dimension(format!(
            "Q is {}x{}, expected {k}x{k}",
            q.nrows(),
            q.ncols()
        )));
    }
    let rho = spectral_radius(f)?;
    if rho >= 1.0 {
        return Err(Error::UnstableMap(rho));
    }
    if k == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let q = symmetrize(q);
    if is_diagonal(f) {
        return Ok(diagonal_solve(&f.diagonal(), &q));
    }
    let use_kron = match method {
        LyapunovMethod::Auto => k <= KRONECKER_MAX_DIM,
        LyapunovMethod::Kronecker => true,
        LyapunovMethod::FixedPoint => false,
    };
    if use_kron {
        kronecker_solve(f, &q)
    } else {
        fixed_point_solve(f, &q, cfg)
    }
}

// With diagonal F the vectorized system is diagonal: X_ij = Q_ij / (1 - f_i f_j).
fn diagonal_solve(d: &DVector<f64>, q: &DMatrix<f64>) -> DMatrix<f64> {
    let k = d.len();
    DMatrix::from_fn(k, k, |i, j| q[(i, j)] / (1.0 - d[i] * d[j]))
}

fn kronecker_solve(f: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let k = f.nrows();
    let system = DMatrix::identity(k * k, k * k) - f.kronecker(f);
    let rhs = DVector::from_column_slice(q.as_slice());
    let x = system
        .full_piv_lu()
        .solve(&rhs)
        .ok_or(Error::IllConditioned(f64::INFINITY))?;
    Ok(symmetrize(&DMatrix::from_column_slice(k, k, x.as_slice())))
}

/// Smith's doubling: after step `j`, `X = Σ_{i<2^j} F^i Q F^iᵀ`.
fn fixed_point_solve(f: &DMatrix<f64>, q: &DMatrix<f64>, cfg: &SolverConfig) -> Result<DMatrix<f64>> {
    let mut x = q.clone();
    let mut power = f.clone();
    for _ in 0..cfg.max_iterations.min(DOUBLING_MAX_STEPS) {
        let step = &power * &x * power.transpose();
        x = symmetrize(&(&x + &step));
        if max_abs(&step) <= f64::EPSILON * max_abs(&x) {
            return Ok(x);
        }
        power = &power * &power;
    }
    Err(Error::NoConvergence(format!(
        "Lyapunov doubling iteration did not settle within {DOUBLING_MAX_STEPS} steps"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn residual(f: &DMatrix<f64>, q: &DMatrix<f64>, x: &DMatrix<f64>) -> f64 {
        max_abs(&(x - f * x * f.transpose() - q))
    }

    #[test]
    fn zero_map_returns_forcing() {
        let q = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let x = solve_stable_lyapunov(&DMatrix::zeros(2, 2), &q).unwrap();
        assert!(max_abs(&(&x - &q)) < 1e-15);
    }

    #[test]
    fn scalar_geometric_series() {
        let x = solve_stable_lyapunov(
            &DMatrix::from_element(1, 1, 0.5),
            &DMatrix::from_element(1, 1, 1.0),
        )
        .unwrap();
        assert!((x[(0, 0)] - 4.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn unstable_map_rejected() {
        let f = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 0.5]);
        let err = solve_stable_lyapunov(&f, &DMatrix::identity(2, 2)).unwrap_err();
        assert!(matches!(err, Error::UnstableMap(_)));
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let err = solve_stable_lyapunov(&DMatrix::zeros(2, 2), &DMatrix::identity(3, 3));
        assert!(matches!(err, Err(Error::Dimension(_))));
    }

    #[test]
    fn all_methods_agree_on_dense_map() {
        let f = DMatrix::from_row_slice(3, 3, &[0.5, 0.2, -0.1, 0.0, -0.4, 0.3, 0.1, 0.1, 0.6]);
        let q = DMatrix::from_row_slice(3, 3, &[2.0, 0.5, 0.1, 0.5, 1.0, 0.2, 0.1, 0.2, 1.5]);
        let cfg = SolverConfig::default();
        let xk = solve_stable_lyapunov_with(&f, &q, LyapunovMethod::Kronecker, &cfg).unwrap();
        let xf = solve_stable_lyapunov_with(&f, &q, LyapunovMethod::FixedPoint, &cfg).unwrap();
        assert!(residual(&f, &q, &xk) < 1e-12);
        assert!(max_abs(&(&xk - &xf)) < 1e-8);
    }

    #[test]
    fn large_dimension_uses_iteration() {
        let k = 10;
        let f = DMatrix::from_fn(k, k, |i, j| if i == j { 0.3 } else { 0.02 * (i as f64 - j as f64) });
        let q = DMatrix::identity(k, k);
        let x = solve_stable_lyapunov(&f, &q).unwrap();
        assert!(residual(&f, &q, &x) < 1e-9);
    }
}
