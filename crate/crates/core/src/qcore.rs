//! Dense complex linear algebra for pure states, density operators, effects
//! and POVMs, plus the Born rule.
//!
//! Everything here is sized for desk-scale checks (dimension at most
//! [`MAX_DIM`]); matrices are dense `nalgebra` matrices over `Complex64`.
//! Tensor products use the row-major convention: the left factor is the
//! high-order index, so `(a ⊗ b)[i * b.dim() + j] = a[i] * b[j]`.
//!
//! On the wire, complex numbers are `[re, im]` pairs and matrices are
//! row-major nested arrays.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

pub type CMatrix = DMatrix<Complex64>;

/// Largest Hilbert-space dimension accepted by the constructors.
pub const MAX_DIM: usize = 64;

/// Construction-time tolerance for norms, hermiticity, and eigenvalue bounds.
pub const ELEMENT_TOL: f64 = 1e-12;

/// Aggregate tolerance for POVM completeness and Born-rule range checks.
pub const AGGREGATE_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuantumError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid {kind}: {reason}")]
    InvalidObject { kind: &'static str, reason: String },
    #[error("numeric violation: Born probability {value} lies outside [0, 1]")]
    NumericViolation { value: f64 },
}

pub type Result<T> = std::result::Result<T, QuantumError>;

fn check_dim(dim: usize) -> Result<()> {
    if dim == 0 {
        return Err(QuantumError::InvalidArgument("dimension 0".into()));
    }
    if dim > MAX_DIM {
        return Err(QuantumError::InvalidArgument(format!(
            "dimension {dim} exceeds the cap of {MAX_DIM}"
        )));
    }
    Ok(())
}

/// Kronecker product of two amplitude vectors, without any normalization.
pub fn kron_vec(a: &[Complex64], b: &[Complex64]) -> Vec<Complex64> {
    let mut out = Vec::with_capacity(a.len() * b.len());
    for x in a {
        for y in b {
            out.push(x * y);
        }
    }
    out
}

/// Kronecker product of two matrices (left factor is the high-order index).
pub fn kron_mat(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a.kronecker(b)
}

/// Largest entrywise modulus of `m - m†`.
pub fn hermiticity_residual(m: &CMatrix) -> f64 {
    let mut worst = 0.0_f64;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

/// Eigenvalues of the Hermitian part of `m`, ascending.
pub fn hermitian_eigenvalues(m: &CMatrix) -> Vec<f64> {
    let h = (m + m.adjoint()).scale(0.5);
    let mut ev: Vec<f64> = SymmetricEigen::new(h).eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

/// A unit vector in `C^dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct PureState {
    amplitudes: DVector<Complex64>,
}

impl PureState {
    pub fn new(amplitudes: Vec<Complex64>) -> Result<Self> {
        check_dim(amplitudes.len())?;
        let norm = amplitudes.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > ELEMENT_TOL {
            return Err(QuantumError::InvalidObject {
                kind: "pure state",
                reason: format!("norm {norm} differs from 1"),
            });
        }
        Ok(Self {
            amplitudes: DVector::from_vec(amplitudes),
        })
    }

    /// Rescales a nonzero vector to unit norm.
    pub fn normalized(amplitudes: Vec<Complex64>) -> Result<Self> {
        check_dim(amplitudes.len())?;
        let norm = amplitudes.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(QuantumError::InvalidArgument(
                "cannot normalize a zero or non-finite vector".into(),
            ));
        }
        Self::new(amplitudes.into_iter().map(|a| a / norm).collect())
    }

    pub fn from_real(amplitudes: &[f64]) -> Result<Self> {
        Self::normalized(amplitudes.iter().map(|&x| Complex64::new(x, 0.0)).collect())
    }

    /// Computational basis vector `|index⟩`.
    pub fn basis(dim: usize, index: usize) -> Result<Self> {
        check_dim(dim)?;
        if index >= dim {
            return Err(QuantumError::InvalidArgument(format!(
                "basis index {index} out of range for dimension {dim}"
            )));
        }
        let mut v = vec![Complex64::new(0.0, 0.0); dim];
        v[index] = Complex64::new(1.0, 0.0);
        Self::new(v)
    }

    /// `|+⟩ = (|0⟩ + |1⟩)/√2`.
    pub fn plus() -> Self {
        Self::from_real(&[1.0, 1.0]).expect("|+> is a valid state")
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        self.amplitudes.as_slice()
    }

    pub fn as_vector(&self) -> &DVector<Complex64> {
        &self.amplitudes
    }

    /// `|s⟩⟨s|`
    pub fn projector(&self) -> CMatrix {
        &self.amplitudes * self.amplitudes.adjoint()
    }

    pub fn density(&self) -> DensityOperator {
        DensityOperator {
            matrix: self.projector(),
        }
    }

    /// `U|s⟩`, renormalized to absorb round-off.
    pub fn transformed(&self, unitary: &CMatrix) -> Result<Self> {
        if unitary.nrows() != self.dim() || unitary.ncols() != self.dim() {
            return Err(QuantumError::InvalidArgument(
                "unitary dimension does not match state".into(),
            ));
        }
        Self::normalized((unitary * &self.amplitudes).iter().copied().collect())
    }

    /// `⟨v|M|v⟩`, real part.
    pub fn expectation(&self, m: &CMatrix) -> f64 {
        (self.amplitudes.adjoint() * m * &self.amplitudes)[(0, 0)].re
    }
}

/// `a ⊗ b` under the row-major index convention.
pub fn tensor(a: &PureState, b: &PureState) -> Result<PureState> {
    check_dim(a.dim())?;
    check_dim(b.dim())?;
    check_dim(a.dim() * b.dim())?;
    PureState::normalized(kron_vec(a.amplitudes(), b.amplitudes()))
}

/// `|⟨a|b⟩|`, clamped into `[0, 1]`.
pub fn overlap(a: &PureState, b: &PureState) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(QuantumError::InvalidArgument(format!(
            "overlap of states with dimensions {} and {}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(a.amplitudes.dotc(&b.amplitudes).norm().min(1.0))
}

/// Positive semidefinite, unit-trace Hermitian matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityOperator {
    matrix: CMatrix,
}

impl DensityOperator {
    pub fn new(matrix: CMatrix) -> Result<Self> {
        let invalid = |reason: String| QuantumError::InvalidObject {
            kind: "density operator",
            reason,
        };
        if !matrix.is_square() {
            return Err(invalid("matrix is not square".into()));
        }
        check_dim(matrix.nrows())?;
        let herm = hermiticity_residual(&matrix);
        if herm > ELEMENT_TOL {
            return Err(invalid(format!("hermiticity residual {herm}")));
        }
        let min_ev = hermitian_eigenvalues(&matrix)[0];
        if min_ev < -ELEMENT_TOL {
            return Err(invalid(format!("negative eigenvalue {min_ev}")));
        }
        let tr = matrix.trace().re;
        if (tr - 1.0).abs() > ELEMENT_TOL {
            return Err(invalid(format!("trace {tr}")));
        }
        Ok(Self { matrix })
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }
}

/// A POVM element: Hermitian with spectrum in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Effect {
    matrix: CMatrix,
}

impl Effect {
    pub fn new(matrix: CMatrix) -> Result<Self> {
        let invalid = |reason: String| QuantumError::InvalidObject {
            kind: "effect",
            reason,
        };
        if !matrix.is_square() {
            return Err(invalid("matrix is not square".into()));
        }
        check_dim(matrix.nrows())?;
        let herm = hermiticity_residual(&matrix);
        if herm > ELEMENT_TOL {
            return Err(invalid(format!("hermiticity residual {herm}")));
        }
        let ev = hermitian_eigenvalues(&matrix);
        let (lo, hi) = (ev[0], ev[ev.len() - 1]);
        if lo < -ELEMENT_TOL || hi > 1.0 + ELEMENT_TOL {
            return Err(invalid(format!("spectrum [{lo}, {hi}] leaves [0, 1]")));
        }
        Ok(Self { matrix })
    }

    /// Wraps a square matrix without checking the effect invariants. Use
    /// [`validate_povm`] before trusting the result.
    pub fn from_matrix_unchecked(matrix: CMatrix) -> Self {
        assert!(matrix.is_square(), "effect matrix must be square");
        Self { matrix }
    }

    pub fn projector(state: &PureState) -> Self {
        Self {
            matrix: state.projector(),
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            matrix: self.matrix.scale(factor),
        }
    }

    /// `U E U†`
    pub fn conjugated(&self, unitary: &CMatrix) -> Self {
        Self {
            matrix: unitary * &self.matrix * unitary.adjoint(),
        }
    }
}

/// An ordered list of effects summing to the identity.
///
/// Deserialization does not check completeness or positivity; certificates
/// read from disk are expected to go through [`validate_povm`].
#[derive(Debug, Clone, PartialEq)]
pub struct Povm {
    effects: Vec<Effect>,
}

impl Povm {
    pub fn new(effects: Vec<Effect>) -> Result<Self> {
        let report = validate_povm(&effects)?;
        if !report.is_valid() {
            return Err(QuantumError::InvalidObject {
                kind: "POVM",
                reason: report.to_string(),
            });
        }
        Ok(Self { effects })
    }

    pub fn from_effects_unchecked(effects: Vec<Effect>) -> Self {
        Self { effects }
    }

    /// Rank-one projectors onto an orthonormal basis.
    pub fn projective(basis: &[PureState]) -> Result<Self> {
        Self::new(basis.iter().map(Effect::projector).collect())
    }

    pub fn computational(dim: usize) -> Result<Self> {
        let basis = (0..dim)
            .map(|i| PureState::basis(dim, i))
            .collect::<Result<Vec<_>>>()?;
        Self::projective(&basis)
    }

    pub fn effects(&self) -> &[Effect] {
        &self.effects
    }

    pub fn len(&self) -> usize {
        self.effects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.effects.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.effects.first().map_or(0, Effect::dim)
    }

    /// Born probabilities of every outcome for a pure state.
    pub fn probabilities(&self, state: &PureState) -> Result<Vec<f64>> {
        let rho = state.density();
        self.effects
            .iter()
            .map(|e| born_probability(&rho, e))
            .collect()
    }
}

/// `Re Tr(ρ e)`, clamped to `[0, 1]` when within [`AGGREGATE_TOL`] of the
/// boundary.
pub fn born_probability(rho: &DensityOperator, e: &Effect) -> Result<f64> {
    if rho.dim() != e.dim() {
        return Err(QuantumError::InvalidArgument(format!(
            "density operator has dimension {} but effect has {}",
            rho.dim(),
            e.dim()
        )));
    }
    let p = (rho.matrix() * e.matrix()).trace().re;
    if !(-AGGREGATE_TOL..=1.0 + AGGREGATE_TOL).contains(&p) {
        return Err(QuantumError::NumericViolation { value: p });
    }
    Ok(p.clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PovmViolationKind {
    Hermiticity,
    Positivity,
    UpperBound,
    Completeness,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PovmViolation {
    pub kind: PovmViolationKind,
    /// Offending effect, or `None` for the completeness check.
    pub effect: Option<usize>,
    pub residual: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PovmReport {
    pub violations: Vec<PovmViolation>,
}

impl PovmReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn find(&self, kind: PovmViolationKind) -> Option<&PovmViolation> {
        self.violations.iter().find(|v| v.kind == kind)
    }
}

impl std::fmt::Display for PovmReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.violations.is_empty() {
            return write!(f, "valid");
        }
        let parts: Vec<String> = self
            .violations
            .iter()
            .map(|v| match v.effect {
                Some(i) => format!("{:?} (effect {i}, residual {:e})", v.kind, v.residual),
                None => format!("{:?} (residual {:e})", v.kind, v.residual),
            })
            .collect();
        write!(f, "{}", parts.join("; "))
    }
}

/// Checks hermiticity, positivity and the upper bound of each effect at
/// [`ELEMENT_TOL`], and completeness of the sum at [`AGGREGATE_TOL`].
pub fn validate_povm(effects: &[Effect]) -> Result<PovmReport> {
    let first = effects
        .first()
        .ok_or_else(|| QuantumError::InvalidArgument("empty effect list".into()))?;
    let dim = first.dim();
    if let Some(bad) = effects.iter().position(|e| e.dim() != dim) {
        return Err(QuantumError::InvalidArgument(format!(
            "effect {bad} has dimension {} but effect 0 has {dim}",
            effects[bad].dim()
        )));
    }

    let mut report = PovmReport::default();
    let mut sum = CMatrix::zeros(dim, dim);
    for (i, e) in effects.iter().enumerate() {
        let herm = hermiticity_residual(e.matrix());
        if herm > ELEMENT_TOL {
            report.violations.push(PovmViolation {
                kind: PovmViolationKind::Hermiticity,
                effect: Some(i),
                residual: herm,
            });
        }
        let ev = hermitian_eigenvalues(e.matrix());
        let (lo, hi) = (ev[0], ev[ev.len() - 1]);
        if lo < -ELEMENT_TOL {
            report.violations.push(PovmViolation {
                kind: PovmViolationKind::Positivity,
                effect: Some(i),
                residual: -lo,
            });
        }
        if hi > 1.0 + ELEMENT_TOL {
            report.violations.push(PovmViolation {
                kind: PovmViolationKind::UpperBound,
                effect: Some(i),
                residual: hi - 1.0,
            });
        }
        sum += e.matrix();
    }
    let gap = (sum - CMatrix::identity(dim, dim))
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max);
    if gap > AGGREGATE_TOL {
        report.violations.push(PovmViolation {
            kind: PovmViolationKind::Completeness,
            effect: None,
            residual: gap,
        });
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// Random sampling

fn gaussian_complex<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
}

/// Haar-random pure state.
pub fn random_state<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> PureState {
    loop {
        let v: Vec<Complex64> = (0..dim).map(|_| gaussian_complex(rng)).collect();
        if let Ok(s) = PureState::normalized(v) {
            return s;
        }
    }
}

/// Haar-random unitary via QR of a Ginibre matrix with the phase fix.
pub fn random_unitary<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> CMatrix {
    let g = CMatrix::from_fn(dim, dim, |_, _| gaussian_complex(rng));
    let qr = g.qr();
    let (mut q, r) = (qr.q(), qr.r());
    for j in 0..dim {
        let d = r[(j, j)];
        let phase = if d.norm() > 0.0 {
            d / d.norm()
        } else {
            Complex64::new(1.0, 0.0)
        };
        for i in 0..dim {
            q[(i, j)] *= phase;
        }
    }
    q
}

/// Columns of a Haar-random unitary, as states.
pub fn random_basis<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Vec<PureState> {
    let u = random_unitary(rng, dim);
    (0..dim)
        .map(|j| {
            PureState::normalized(u.column(j).iter().copied().collect())
                .expect("unitary columns are unit vectors")
        })
        .collect()
}

// ---------------------------------------------------------------------------
// JSON representation

fn matrix_to_rows(m: &CMatrix) -> Vec<Vec<Complex64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

fn rows_to_matrix(rows: Vec<Vec<Complex64>>) -> std::result::Result<CMatrix, String> {
    let n = rows.len();
    if n == 0 {
        return Err("empty matrix".into());
    }
    if let Some(bad) = rows.iter().position(|r| r.len() != n) {
        return Err(format!(
            "row {bad} has {} entries, expected {n}",
            rows[bad].len()
        ));
    }
    Ok(CMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

impl Serialize for PureState {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.amplitudes.as_slice().serialize(s)
    }
}

impl<'de> Deserialize<'de> for PureState {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = Vec::<Complex64>::deserialize(d)?;
        PureState::new(v).map_err(serde::de::Error::custom)
    }
}

impl Serialize for DensityOperator {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        matrix_to_rows(&self.matrix).serialize(s)
    }
}

impl<'de> Deserialize<'de> for DensityOperator {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let m = rows_to_matrix(Vec::deserialize(d)?).map_err(serde::de::Error::custom)?;
        DensityOperator::new(m).map_err(serde::de::Error::custom)
    }
}

impl Serialize for Effect {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        matrix_to_rows(&self.matrix).serialize(s)
    }
}

impl<'de> Deserialize<'de> for Effect {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let m = rows_to_matrix(Vec::deserialize(d)?).map_err(serde::de::Error::custom)?;
        Effect::new(m).map_err(serde::de::Error::custom)
    }
}

impl Serialize for Povm {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.effects.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Povm {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let effects = Vec::<Effect>::deserialize(d)?;
        if effects.is_empty() {
            return Err(serde::de::Error::custom("empty POVM"));
        }
        Ok(Povm::from_effects_unchecked(effects))
    }
}
