//! Source and channel models, their canonical forms, and the standing
//! assumptions (controllable, strictly unstable, distinct eigenvalues).

use std::fmt;

use log::warn;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{
    ensure_square, is_diagonal, is_positive_definite, max_abs, numerical_rank, sym_sqrt,
    sym_spectral_map, symmetrize,
};

/// Relative gap under which two eigenvalues count as repeated.
pub const EIGEN_DISTINCT_TOL: f64 = 1e-8;
/// Singular-value threshold (relative to the largest) for rank decisions.
pub const RANK_TOL: f64 = 1e-10;
/// Sub-channel gains below this are clamped to zero.
pub const GAIN_FLOOR: f64 = 1e-12;
/// Relative imaginary part above which an eigenvalue is treated as complex.
const IMAG_TOL: f64 = 1e-9;
/// Eigenvalues this close to the unit circle are neither stable nor unstable.
const UNIT_CIRCLE_TOL: f64 = 1e-9;

/// Gauss-Markov source `S_{t+1} = A S_t + W_t`, `W_t ~ N(0, Q)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceModel {
    pub a: DMatrix<f64>,
    pub q: DMatrix<f64>,
    /// Spectrum of `a`, sorted by descending modulus.
    pub eigenvalues: Vec<Complex<f64>>,
}

impl SourceModel {
    pub fn new(a: DMatrix<f64>, q: DMatrix<f64>) -> Result<Self> {
        let k = ensure_square(&a, "A")?;
        if q.nrows() != k || q.ncols() != k {
            return Err(Error::Dimension(format!(
                "Q is {}x{}, expected {k}x{k}",
                q.nrows(),
                q.ncols()
            )));
        }
        if k == 0 {
            return Err(Error::Model("source dimension must be at least 1".into()));
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::Model("A has non-finite entries".into()));
        }
        if max_abs(&(&q - q.transpose())) > 1e-9 * max_abs(&q).max(1.0) {
            return Err(Error::Model("Q is not symmetric".into()));
        }
        let q = symmetrize(&q);
        if !is_positive_definite(&q) {
            return Err(Error::Model("Q must be positive definite".into()));
        }
        let eigenvalues = sorted_spectrum(&a);
        Ok(Self { a, q, eigenvalues })
    }

    /// Diagonal source `A = diag(lambdas)`.
    pub fn diagonal(lambdas: &[f64], q: DMatrix<f64>) -> Result<Self> {
        let a = DMatrix::from_diagonal(&DVector::from_column_slice(lambdas));
        Self::new(a, q)
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    /// Eigenvalue moduli in the same (descending) order as `eigenvalues`.
    pub fn moduli(&self) -> Vec<f64> {
        self.eigenvalues.iter().map(|z| z.norm()).collect()
    }

    /// Moduli of the diagonal entries, in state order. For a canonical
    /// source these are the per-mode `|λ_j|`.
    pub fn mode_moduli(&self) -> Vec<f64> {
        if is_diagonal(&self.a) {
            self.a.diagonal().iter().map(|v| v.abs()).collect()
        } else {
            self.moduli()
        }
    }

    /// `Σ log|λ_j|` over all modes (nats).
    pub fn sum_log_moduli(&self) -> f64 {
        self.eigenvalues.iter().map(|z| z.norm().ln()).sum()
    }
}

fn sorted_spectrum(a: &DMatrix<f64>) -> Vec<Complex<f64>> {
    let mut ev: Vec<Complex<f64>> = if is_diagonal(a) {
        a.diagonal().iter().map(|&v| Complex::new(v, 0.0)).collect()
    } else {
        a.complex_eigenvalues().iter().cloned().collect()
    };
    ev.sort_by(|x, y| {
        y.norm()
            .total_cmp(&x.norm())
            .then(y.re.total_cmp(&x.re))
            .then(y.im.total_cmp(&x.im))
    });
    ev
}

/// Raw MIMO AWGN channel `Y = H X + Z`, `Z ~ N(0, R)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelModel {
    /// m x n gain matrix.
    pub h: DMatrix<f64>,
    /// m x m noise covariance.
    pub r: DMatrix<f64>,
}

impl ChannelModel {
    pub fn new(h: DMatrix<f64>, r: DMatrix<f64>) -> Result<Self> {
        let m = h.nrows();
        if r.nrows() != m || r.ncols() != m {
            return Err(Error::Dimension(format!(
                "R is {}x{}, expected {m}x{m}",
                r.nrows(),
                r.ncols()
            )));
        }
        if m == 0 || h.ncols() == 0 {
            return Err(Error::Model("channel must have at least one input and output".into()));
        }
        if h.iter().any(|v| !v.is_finite()) {
            return Err(Error::Model("H has non-finite entries".into()));
        }
        if max_abs(&(&r - r.transpose())) > 1e-9 * max_abs(&r).max(1.0) || !is_positive_definite(&r)
        {
            return Err(Error::Model("R must be symmetric positive definite".into()));
        }
        Ok(Self { h, r })
    }

    pub fn inputs(&self) -> usize {
        self.h.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.h.nrows()
    }
}

/// Canonical channel `Ȳ_i = h_i X̄_i + Z̄_i` with unit-variance noise.
///
/// `input_transform` maps a raw input to canonical coordinates
/// (`X̄ = input_transform · X`) and `output_transform` whitens and rotates
/// a raw output (`Ȳ = output_transform · Y`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagonalChannel {
    /// One gain per input, sorted descending. Inputs beyond the channel
    /// rank carry gain zero.
    pub gains: Vec<f64>,
    pub input_transform: DMatrix<f64>,
    pub output_transform: DMatrix<f64>,
}

impl DiagonalChannel {
    /// Channel given directly by its sub-channel gains. Gains are sorted
    /// descending; the permutation is recorded in both transforms.
    pub fn from_gains(gains: &[f64]) -> Result<Self> {
        let n = gains.len();
        if n == 0 {
            return Err(Error::Model("at least one sub-channel gain is required".into()));
        }
        if gains.iter().any(|g| !g.is_finite() || *g < 0.0) {
            return Err(Error::Model("gains must be finite and nonnegative".into()));
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| gains[b].total_cmp(&gains[a]).then(a.cmp(&b)));
        let perm = DMatrix::from_fn(n, n, |i, j| if order[i] == j { 1.0 } else { 0.0 });
        let sorted = order.iter().map(|&i| clamp_gain(gains[i])).collect();
        Ok(Self {
            gains: sorted,
            input_transform: perm.clone(),
            output_transform: perm,
        })
    }

    pub fn inputs(&self) -> usize {
        self.gains.len()
    }

    /// `diag(h_1, ..., h_n)`.
    pub fn gain_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_column_slice(&self.gains))
    }

    pub fn usable(&self, i: usize) -> bool {
        self.gains[i] > 0.0
    }

    /// Largest gain `h_1`.
    pub fn best_gain(&self) -> f64 {
        self.gains[0]
    }

    /// Maps a raw channel output into canonical coordinates, keeping the
    /// first `n` components (the rest carry no signal).
    pub fn canonical_output(&self, y: &DVector<f64>) -> DVector<f64> {
        let full = &self.output_transform * y;
        let n = self.inputs();
        DVector::from_fn(n, |i, _| if i < full.len() { full[i] } else { 0.0 })
    }

    /// Raw input corresponding to a canonical input.
    pub fn raw_input(&self, x_canonical: &DVector<f64>) -> DVector<f64> {
        self.input_transform.transpose() * x_canonical
    }
}

fn clamp_gain(g: f64) -> f64 {
    if g < GAIN_FLOOR {
        0.0
    } else {
        g
    }
}

/// Whitens the noise and diagonalizes the gain by singular value
/// decomposition.
pub fn diagonalize_channel(raw: &ChannelModel) -> Result<DiagonalChannel> {
    let m = raw.outputs();
    let n = raw.inputs();
    let whitening = sym_spectral_map(&raw.r, |v| 1.0 / v.sqrt());
    let white = &whitening * &raw.h;

    // Right singular vectors from the n x n Gram matrix, sorted descending.
    let gram = symmetrize(&(white.transpose() * &white));
    let eig = gram.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let mut v = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let mut col = eig.eigenvectors.column(src).clone_owned();
        normalize_sign(&mut col);
        v.set_column(dst, &col);
    }

    // Singular values from the columns of white * V, which are orthogonal
    // with norms sigma_i; this is more accurate than sqrt of eigenvalues.
    let wv = &white * &v;
    let rank_limit = m.min(n);
    let top = (0..n).map(|j| wv.column(j).norm()).fold(0.0, f64::max);
    let mut gains = vec![0.0; n];
    let mut u_cols: Vec<DVector<f64>> = Vec::with_capacity(m);
    for j in 0..rank_limit {
        let sigma = wv.column(j).norm();
        if sigma > RANK_TOL * top && sigma >= GAIN_FLOOR {
            gains[j] = sigma;
            u_cols.push(wv.column(j) / sigma);
        } else {
            break;
        }
    }
    let u = complete_orthonormal(u_cols, m);
    Ok(DiagonalChannel {
        gains,
        input_transform: v.transpose(),
        output_transform: u.transpose() * whitening,
    })
}

fn normalize_sign(v: &mut DVector<f64>) {
    let (idx, _) = v
        .iter()
        .enumerate()
        .fold((0, 0.0), |(bi, bv), (i, x)| if x.abs() > bv + 1e-12 { (i, x.abs()) } else { (bi, bv) });
    if v[idx] < 0.0 {
        *v *= -1.0;
    }
}

/// Extends orthonormal columns to an orthonormal basis of R^m by
/// Gram-Schmidt against the standard basis.
fn complete_orthonormal(mut cols: Vec<DVector<f64>>, m: usize) -> DMatrix<f64> {
    for e in 0..m {
        if cols.len() == m {
            break;
        }
        let mut cand = DVector::from_fn(m, |i, _| if i == e { 1.0 } else { 0.0 });
        for _ in 0..2 {
            for c in &cols {
                let proj = c.dot(&cand);
                cand -= c * proj;
            }
        }
        let norm = cand.norm();
        if norm > 1e-8 {
            cols.push(cand / norm);
        }
    }
    DMatrix::from_columns(&cols)
}

/// A source in eigen-coordinates together with the state transform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CanonicalSource {
    pub source: SourceModel,
    /// Rows are left eigenvectors of the retained (unstable) modes:
    /// `transform · A_raw = A · transform`.
    pub transform: DMatrix<f64>,
    /// Stable eigenvalues projected out of the model.
    pub stripped_modes: Vec<f64>,
}

/// Brings `(A_raw, Q_raw)` to diagonal form. Stable modes are stripped with
/// a warning; complex, repeated or unit-modulus eigenvalues are rejected.
pub fn canonicalize_source(a_raw: &DMatrix<f64>, q_raw: &DMatrix<f64>) -> Result<CanonicalSource> {
    let raw = SourceModel::new(a_raw.clone(), q_raw.clone())?;
    let k = raw.dim();

    for z in &raw.eigenvalues {
        if z.im.abs() > IMAG_TOL * z.norm().max(1.0) {
            return Err(Error::AssumptionViolation(format!(
                "complex eigenvalue {:.6}{:+.6}i: only sources with real, distinct eigenvalues are supported \
                 (non-diagonalizable and rotational modes are out of scope)",
                z.re, z.im
            )));
        }
    }
    let values: Vec<f64> = raw.eigenvalues.iter().map(|z| z.re).collect();
    if let Some((x, y)) = first_repeated(&values) {
        return Err(Error::AssumptionViolation(format!(
            "repeated eigenvalues {x} and {y}: Jordan-block sources are out of scope"
        )));
    }
    if let Some(v) = values.iter().find(|v| (v.abs() - 1.0).abs() <= UNIT_CIRCLE_TOL) {
        return Err(Error::AssumptionViolation(format!(
            "eigenvalue {v} lies on the unit circle: source is not strictly unstable"
        )));
    }

    // Preserve the given order for an already-diagonal A; otherwise order
    // modes by descending modulus.
    let ordered: Vec<(f64, DVector<f64>)> = if is_diagonal(a_raw) {
        (0..k)
            .map(|i| (a_raw[(i, i)], DVector::from_fn(k, |r, _| if r == i { 1.0 } else { 0.0 })))
            .collect()
    } else {
        values
            .iter()
            .map(|&lam| Ok((lam, eigenvector(a_raw, lam)?)))
            .collect::<Result<_>>()?
    };

    let v = DMatrix::from_columns(&ordered.iter().map(|(_, vec)| vec.clone()).collect::<Vec<_>>());
    let v_inv = v
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::AssumptionViolation("eigenvectors are linearly dependent".into()))?;

    let mut keep_rows = Vec::new();
    let mut lambdas = Vec::new();
    let mut stripped = Vec::new();
    for (i, (lam, _)) in ordered.iter().enumerate() {
        if lam.abs() > 1.0 {
            keep_rows.push(i);
            lambdas.push(*lam);
        } else {
            stripped.push(*lam);
        }
    }
    if lambdas.is_empty() {
        return Err(Error::AssumptionViolation(
            "source has no unstable modes; nothing needs to be communicated".into(),
        ));
    }
    if !stripped.is_empty() {
        warn!("stripping stable modes {stripped:?}; they have finite error without communication");
    }
    let transform = DMatrix::from_rows(
        &keep_rows.iter().map(|&i| v_inv.row(i).clone_owned()).collect::<Vec<_>>(),
    );
    let q = symmetrize(&(&transform * q_raw * transform.transpose()));
    let source = SourceModel::diagonal(&lambdas, q)?;
    Ok(CanonicalSource {
        source,
        transform,
        stripped_modes: stripped,
    })
}

fn first_repeated(values: &[f64]) -> Option<(f64, f64)> {
    for (i, &x) in values.iter().enumerate() {
        for &y in &values[i + 1..] {
            let scale = x.abs().max(y.abs()).max(f64::MIN_POSITIVE);
            if (x - y).abs() <= EIGEN_DISTINCT_TOL * scale {
                return Some((x, y));
            }
        }
    }
    None
}

fn eigenvector(a: &DMatrix<f64>, lam: f64) -> Result<DVector<f64>> {
    let k = a.nrows();
    let shifted = a - DMatrix::identity(k, k) * lam;
    let svd = shifted.svd(false, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::Model("eigenvector computation failed".into()))?;
    let (idx, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |(bi, bv), (i, &s)| if s < bv { (i, s) } else { (bi, bv) });
    let mut vec = v_t.row(idx).transpose();
    normalize_sign(&mut vec);
    Ok(vec)
}

/// Source, canonical channel and power budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub source: SourceModel,
    pub channel: DiagonalChannel,
    pub power: f64,
}

impl Scenario {
    pub fn new(source: SourceModel, channel: DiagonalChannel, power: f64) -> Result<Self> {
        if !(power > 0.0 && power.is_finite()) {
            return Err(Error::Model(format!("power budget must be positive, got {power}")));
        }
        Ok(Self {
            source,
            channel,
            power,
        })
    }

    pub fn k(&self) -> usize {
        self.source.dim()
    }

    pub fn n(&self) -> usize {
        self.channel.inputs()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Violation {
    NotControllable { rank: usize, dim: usize },
    NotStrictlyUnstable { eigenvalue: f64 },
    RepeatedEigenvalues { first: f64, second: f64 },
    ComplexEigenvalue { re: f64, im: f64 },
    NoiseNotPositiveDefinite,
    ChannelNoiseNotPositiveDefinite,
    NonPositivePower { power: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NotControllable { rank, dim } => {
                write!(f, "(A, Q^1/2) not controllable: rank {rank} < {dim}")
            }
            Violation::NotStrictlyUnstable { eigenvalue } => {
                write!(f, "not strictly unstable: eigenvalue {eigenvalue} has modulus <= 1")
            }
            Violation::RepeatedEigenvalues { first, second } => {
                write!(f, "repeated eigenvalues: {first} and {second}")
            }
            Violation::ComplexEigenvalue { re, im } => {
                write!(f, "complex eigenvalue {re}{im:+}i")
            }
            Violation::NoiseNotPositiveDefinite => write!(f, "Q is not positive definite"),
            Violation::ChannelNoiseNotPositiveDefinite => {
                write!(f, "channel noise covariance is not positive definite")
            }
            Violation::NonPositivePower { power } => write!(f, "power budget {power} is not positive"),
        }
    }
}

/// Checks the standing assumptions; an empty list means the scenario is
/// admissible.
pub fn validate_assumptions(scenario: &Scenario) -> Vec<Violation> {
    let mut out = Vec::new();
    let src = &scenario.source;
    let k = src.dim();

    if !is_positive_definite(&src.q) {
        out.push(Violation::NoiseNotPositiveDefinite);
    }
    for z in &src.eigenvalues {
        if z.im.abs() > IMAG_TOL * z.norm().max(1.0) {
            out.push(Violation::ComplexEigenvalue { re: z.re, im: z.im });
        } else if z.norm() <= 1.0 + UNIT_CIRCLE_TOL {
            out.push(Violation::NotStrictlyUnstable { eigenvalue: z.re });
        }
    }
    let values: Vec<f64> = src.eigenvalues.iter().map(|z| z.re).collect();
    if let Some((first, second)) = first_repeated(&values) {
        out.push(Violation::RepeatedEigenvalues { first, second });
    }

    let b = sym_sqrt(&src.q);
    let mut blocks = Vec::with_capacity(k);
    let mut cur = b.clone();
    for _ in 0..k {
        blocks.push(cur.clone());
        cur = &src.a * cur;
    }
    let ctrb = DMatrix::from_fn(k, k * k, |i, j| blocks[j / k][(i, j % k)]);
    let rank = numerical_rank(&ctrb, RANK_TOL);
    if rank < k {
        out.push(Violation::NotControllable { rank, dim: k });
    }

    if scenario.channel.gains.iter().any(|g| !g.is_finite() || *g < 0.0)
        || !is_positive_definite(
            &(scenario.channel.output_transform.transpose() * &scenario.channel.output_transform),
        )
    {
        out.push(Violation::ChannelNoiseNotPositiveDefinite);
    }
    if !(scenario.power > 0.0) {
        out.push(Violation::NonPositivePower {
            power: scenario.power,
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn diag(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_column_slice(v))
    }

    #[test]
    fn identity_channel() {
        let ch = diagonalize_channel(&ChannelModel::new(DMatrix::identity(2, 2), DMatrix::identity(2, 2)).unwrap())
            .unwrap();
        assert_eq!(ch.gains.len(), 2);
        assert!((ch.gains[0] - 1.0).abs() < 1e-12 && (ch.gains[1] - 1.0).abs() < 1e-12);
        let prod = &ch.input_transform * ch.input_transform.transpose();
        assert!(max_abs(&(prod - DMatrix::identity(2, 2))) < 1e-12);
    }

    #[test]
    fn diagonal_channel_reordered() {
        let ch = diagonalize_channel(&ChannelModel::new(diag(&[1.0, 3.0]), DMatrix::identity(2, 2)).unwrap()).unwrap();
        assert!((ch.gains[0] - 3.0).abs() < 1e-12);
        assert!((ch.gains[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn antidiagonal_channel_singular_values() {
        let h = DMatrix::from_row_slice(2, 2, &[0.0, 2.0, 1.0, 0.0]);
        let raw = ChannelModel::new(h.clone(), DMatrix::identity(2, 2)).unwrap();
        let ch = diagonalize_channel(&raw).unwrap();
        assert!((ch.gains[0] - 2.0).abs() < 1e-12);
        assert!((ch.gains[1] - 1.0).abs() < 1e-12);
        // output_transform * H * input_transformᵀ = diag(gains)
        let sigma = &ch.output_transform * h * ch.input_transform.transpose();
        assert!(max_abs(&(sigma - ch.gain_matrix())) < 1e-12);
    }

    #[test]
    fn whitening_yields_unit_noise() {
        let h = DMatrix::from_row_slice(3, 2, &[1.0, 0.5, -0.2, 2.0, 0.3, 0.1]);
        let r = DMatrix::from_row_slice(3, 3, &[2.0, 0.3, 0.0, 0.3, 1.0, 0.1, 0.0, 0.1, 0.5]);
        let ch = diagonalize_channel(&ChannelModel::new(h.clone(), r.clone()).unwrap()).unwrap();
        let noise = &ch.output_transform * &r * ch.output_transform.transpose();
        assert!(max_abs(&(noise - DMatrix::identity(3, 3))) < 1e-10);
        let sigma = &ch.output_transform * &h * ch.input_transform.transpose();
        for i in 0..3 {
            for j in 0..2 {
                let expect = if i == j { ch.gains[i] } else { 0.0 };
                assert!((sigma[(i, j)] - expect).abs() < 1e-10, "{sigma}");
            }
        }
        assert!(ch.gains[0] >= ch.gains[1]);
    }

    #[test]
    fn wide_channel_pads_zero_gains() {
        let h = DMatrix::from_row_slice(1, 3, &[1.0, 2.0, 2.0]);
        let ch = diagonalize_channel(&ChannelModel::new(h, DMatrix::identity(1, 1)).unwrap()).unwrap();
        assert_eq!(ch.gains.len(), 3);
        assert!((ch.gains[0] - 3.0).abs() < 1e-12);
        assert_eq!(&ch.gains[1..], &[0.0, 0.0]);
        assert!(!ch.usable(1));
    }

    #[test]
    fn channel_rejects_indefinite_noise() {
        let r = diag(&[1.0, -1.0]);
        assert!(matches!(ChannelModel::new(DMatrix::identity(2, 2), r), Err(Error::Model(_))));
    }

    #[test]
    fn canonical_diagonal_source_keeps_identity() {
        let c = canonicalize_source(&diag(&[2.0, 3.0]), &DMatrix::identity(2, 2)).unwrap();
        assert!(max_abs(&(&c.transform - DMatrix::identity(2, 2))) < 1e-15);
        assert_eq!(c.source.a, diag(&[2.0, 3.0]));
    }

    #[test]
    fn canonical_companion_source() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -6.0, 5.0]);
        let q = DMatrix::identity(2, 2);
        let c = canonicalize_source(&a, &q).unwrap();
        assert!(max_abs(&(&c.source.a - diag(&[3.0, 2.0]))) < 1e-10);
        // T A = D T
        let lhs = &c.transform * &a;
        let rhs = &c.source.a * &c.transform;
        assert!(max_abs(&(lhs - rhs)) < 1e-10);
        let qt = &c.transform * &q * c.transform.transpose();
        assert!(max_abs(&(qt - &c.source.q)) < 1e-12);
    }

    #[test]
    fn jordan_block_rejected() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 0.0, 2.0]);
        let err = canonicalize_source(&a, &DMatrix::identity(2, 2)).unwrap_err();
        assert!(matches!(err, Error::AssumptionViolation(_)));
    }

    #[test]
    fn complex_pair_rejected() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, -2.0, 2.0, 1.0]);
        let err = canonicalize_source(&a, &DMatrix::identity(2, 2)).unwrap_err();
        match err {
            Error::AssumptionViolation(msg) => assert!(msg.contains("complex")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn stable_modes_are_stripped() {
        let c = canonicalize_source(&diag(&[2.0, 0.5, -3.0]), &DMatrix::identity(3, 3)).unwrap();
        assert_eq!(c.stripped_modes, vec![0.5]);
        assert_eq!(c.source.dim(), 2);
        assert_eq!(c.source.a, diag(&[2.0, -3.0]));
        assert_eq!(c.transform.nrows(), 2);
    }

    #[test]
    fn validate_examples() {
        let ch = DiagonalChannel::from_gains(&[1.0]).unwrap();
        let ok = Scenario::new(SourceModel::diagonal(&[2.0, 3.0], DMatrix::identity(2, 2)).unwrap(), ch.clone(), 1.0)
            .unwrap();
        assert!(validate_assumptions(&ok).is_empty());

        let stable =
            Scenario::new(SourceModel::diagonal(&[2.0, 0.5], DMatrix::identity(2, 2)).unwrap(), ch.clone(), 1.0)
                .unwrap();
        let v = validate_assumptions(&stable);
        assert_eq!(v.len(), 1);
        assert!(v[0].to_string().contains("not strictly unstable"));

        let rep = Scenario::new(SourceModel::diagonal(&[2.0, 2.0], DMatrix::identity(2, 2)).unwrap(), ch, 1.0)
            .unwrap();
        let v = validate_assumptions(&rep);
        assert!(v.iter().any(|x| x.to_string().contains("repeated eigenvalues")));
    }

    #[test]
    fn from_gains_sorts_descending() {
        let ch = DiagonalChannel::from_gains(&[0.5, 2.0, 1.0]).unwrap();
        assert_eq!(ch.gains, vec![2.0, 1.0, 0.5]);
        let x = DVector::from_vec(vec![10.0, 20.0, 30.0]);
        // canonical coordinate 0 is raw input 1
        assert_eq!((&ch.input_transform * x)[0], 20.0);
    }
}
