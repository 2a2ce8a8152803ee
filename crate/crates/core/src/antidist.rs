//! Antidistinguishability: the credence-level test, the two-system product
//! set, and a numerical search for conclusive-exclusion measurements.
//!
//! The search parameterizes an `n`-outcome POVM by unconstrained complex
//! matrices `M_k` through
//!
//! ```text
//! S = Σ_k M_k† M_k,    E_k = S^{-1/2} M_k† M_k S^{-1/2},
//! ```
//!
//! which is a valid POVM for any `M` with invertible `S`. Outcome `k` is
//! meant to exclude state `a(k) = k mod n_states`, and the descent minimizes
//! `Σ_k ⟨s_a(k)|E_k|s_a(k)⟩` by gradient steps with Armijo backtracking from
//! many random starts. The residual is the largest of these terms. Solver
//! output is never trusted on its own; [`verify_certificate`] recomputes
//! everything through the Born rule in [`crate::qcore`].

use nalgebra::SymmetricEigen;
use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ontmodel::CredenceTable;
use crate::qcore::{
    self, born_probability, overlap, tensor, validate_povm, CMatrix, Effect, Povm, PovmReport,
    PureState, QuantumError,
};

/// Condition number of `S` above which a starting point is redrawn.
pub const MAX_CONDITION: f64 = 1e12;
const POLISH_FACTOR: f64 = 1e-6;
const POLISH_ITERATIONS: usize = 1000;

/// Restarts are run in fixed-size parallel batches; the search stops after
/// the first batch that certifies.
const BATCH: usize = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AntidistError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Quantum(#[from] QuantumError),
}

pub type Result<T> = std::result::Result<T, AntidistError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AntidistCredences {
    pub antidistinguishable: bool,
    /// For each outcome, the acts it rules out.
    pub excluded: Vec<Vec<usize>>,
}

/// True iff every outcome column holds at least one entry `<= zero_tol`.
pub fn antidistinguishable_credences(cred: &CredenceTable, zero_tol: f64) -> AntidistCredences {
    let excluded: Vec<Vec<usize>> = (0..cred.n_outcomes())
        .map(|k| {
            (0..cred.n_acts())
                .filter(|&a| cred.rows[a][k] <= zero_tol)
                .collect()
        })
        .collect();
    AntidistCredences {
        antidistinguishable: cred.n_acts() > 0 && excluded.iter().all(|e| !e.is_empty()),
        excluded,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PbrSet {
    /// `[φ⊗φ, φ⊗ψ, ψ⊗φ, ψ⊗ψ]`
    pub states: Vec<PureState>,
    /// Set when `φ` and `ψ` coincide up to phase, making all four equal.
    pub warning: Option<String>,
}

/// The four product states of two systems each prepared in `φ` or `ψ`.
pub fn pbr_product_set(phi: &PureState, psi: &PureState) -> Result<PbrSet> {
    let o = overlap(phi, psi)?;
    let states = vec![
        tensor(phi, phi)?,
        tensor(phi, psi)?,
        tensor(psi, phi)?,
        tensor(psi, psi)?,
    ];
    let warning = (o >= 1.0 - qcore::ELEMENT_TOL)
        .then(|| "phi and psi coincide up to phase; the four states are identical".to_string());
    Ok(PbrSet { states, warning })
}

/// Armijo backtracking parameters for the descent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StepSchedule {
    pub initial: f64,
    pub shrink: f64,
    pub grow: f64,
    /// Sufficient-decrease constant.
    pub armijo: f64,
}

impl Default for StepSchedule {
    fn default() -> Self {
        Self {
            initial: 1.0,
            shrink: 0.5,
            grow: 1.5,
            armijo: 1e-4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub restarts: usize,
    pub max_iterations: usize,
    pub step_schedule: StepSchedule,
    pub tol: f64,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            restarts: 100,
            max_iterations: 5000,
            step_schedule: StepSchedule::default(),
            tol: 1e-6,
            seed: 0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.restarts == 0 {
            return Err(AntidistError::InvalidArgument(
                "restarts must be >= 1".into(),
            ));
        }
        if !(self.tol > 0.0) {
            return Err(AntidistError::InvalidArgument("tol must be > 0".into()));
        }
        let s = &self.step_schedule;
        if !(s.initial > 0.0) || !(0.0 < s.shrink && s.shrink < 1.0) || !(s.grow >= 1.0) {
            return Err(AntidistError::InvalidArgument(
                "step schedule needs initial > 0, 0 < shrink < 1, grow >= 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExclusionCertificate {
    pub povm: Povm,
    /// `assignment[k]` is the state that outcome `k` rules out.
    pub assignment: Vec<usize>,
    /// `max_k ⟨s_assignment[k]|E_k|s_assignment[k]⟩`
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveOutcome {
    pub certified: bool,
    /// Best certificate found, certified or not.
    pub certificate: ExclusionCertificate,
    pub restarts_used: usize,
    pub best_restart: usize,
    /// Starting points redrawn because `S` was too ill-conditioned.
    pub reseeds: usize,
}

/// Default assignment: outcome `k` excludes state `k mod n_states`.
pub fn default_assignment(n_states: usize, n_outcomes: usize) -> Vec<usize> {
    (0..n_outcomes).map(|k| k % n_states).collect()
}

pub(crate) struct Evaluation {
    pub objective: f64,
    pub per_outcome: Vec<f64>,
    pub effects: Vec<CMatrix>,
    /// Inverse square root of `S` and its eigendecomposition.
    pub inv_sqrt: CMatrix,
    eigvecs: CMatrix,
    eigvals: Vec<f64>,
}

/// Evaluates the objective at `ms`, or `None` when `S` is ill-conditioned.
pub(crate) fn evaluate(targets: &[CMatrix], ms: &[CMatrix]) -> Option<Evaluation> {
    let dim = ms[0].nrows();
    let grams: Vec<CMatrix> = ms.iter().map(|m| m.adjoint() * m).collect();
    let mut s = CMatrix::zeros(dim, dim);
    for g in &grams {
        s += g;
    }
    let s = (&s + s.adjoint()).scale(0.5);
    let eig = SymmetricEigen::new(s);
    let eigvals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    let lo = eigvals.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = eigvals.iter().copied().fold(0.0, f64::max);
    if !(lo > 0.0) || !lo.is_finite() || hi / lo > MAX_CONDITION {
        return None;
    }
    let u = eig.eigenvectors;
    let d = CMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
        dim,
        eigvals.iter().map(|l| Complex64::new(l.powf(-0.5), 0.0)),
    ));
    let inv_sqrt = &u * d * u.adjoint();
    let effects: Vec<CMatrix> = grams
        .iter()
        .map(|g| {
            let e = &inv_sqrt * g * &inv_sqrt;
            (&e + e.adjoint()).scale(0.5)
        })
        .collect();
    let per_outcome: Vec<f64> = effects
        .iter()
        .zip(targets)
        .map(|(e, a)| (a * e).trace().re)
        .collect();
    Some(Evaluation {
        objective: per_outcome.iter().sum(),
        per_outcome,
        effects,
        inv_sqrt,
        eigvecs: u,
        eigvals,
    })
}

/// Euclidean gradient of the objective with respect to `(Re M_k, Im M_k)`,
/// packed as complex matrices: `df = Re Σ_k tr(G_k† dM_k)`.
pub(crate) fn gradient(targets: &[CMatrix], ms: &[CMatrix], ev: &Evaluation) -> Vec<CMatrix> {
    let dim = ms[0].nrows();
    let t = &ev.inv_sqrt;
    let u = &ev.eigvecs;
    // Fréchet derivative of S ↦ S^{-1/2} in the eigenbasis of S: divided
    // differences of x^{-1/2}, which have this closed form.
    let roots: Vec<f64> = ev.eigvals.iter().map(|l| l.sqrt()).collect();
    let mut c = CMatrix::zeros(dim, dim);
    for (m, a) in ms.iter().zip(targets) {
        let g = m.adjoint() * m;
        let x = a * t * &g;
        c += &x + x.adjoint();
    }
    let mut c_hat = u.adjoint() * c * u;
    for i in 0..dim {
        for j in 0..dim {
            let gamma = -1.0 / (roots[i] * roots[j] * (roots[i] + roots[j]));
            c_hat[(i, j)] *= gamma;
        }
    }
    let k = u * c_hat * u.adjoint();
    ms.iter()
        .zip(targets)
        .map(|(m, a)| {
            let w = t * a * t + &k;
            m * w.scale(2.0)
        })
        .collect()
}

fn random_matrix(rng: &mut ChaCha8Rng, dim: usize) -> CMatrix {
    CMatrix::from_fn(dim, dim, |_, _| {
        Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
    })
}

struct RestartResult {
    residual: f64,
    objective: f64,
    effects: Vec<CMatrix>,
    reseeds: usize,
}

fn run_restart(
    targets: &[CMatrix],
    dim: usize,
    config: &SolverConfig,
    restart: usize,
) -> RestartResult {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(restart as u64);
    let n = targets.len();
    let mut reseeds = 0;
    let (mut ms, mut ev) = loop {
        let ms: Vec<CMatrix> = (0..n).map(|_| random_matrix(&mut rng, dim)).collect();
        match evaluate(targets, &ms) {
            Some(ev) => break (ms, ev),
            None => reseeds += 1,
        }
    };
    let sched = config.step_schedule;
    let mut step = sched.initial;
    let mut polish = 0;
    for _ in 0..config.max_iterations {
        let residual = ev.per_outcome.iter().copied().fold(0.0, f64::max);
        // Once certified, keep descending for a bounded number of steps so
        // exact exclusions come out near machine precision.
        if residual <= config.tol {
            if residual <= config.tol * POLISH_FACTOR || polish == POLISH_ITERATIONS {
                break;
            }
            polish += 1;
        }
        // Rescale so that S = I; the effects are unchanged.
        ms = ms.iter().map(|m| m * &ev.inv_sqrt).collect();
        ev = evaluate(targets, &ms).expect("normalized point is well conditioned");
        let grad = gradient(targets, &ms, &ev);
        let gnorm2: f64 = grad.iter().map(|g| g.norm_squared()).sum();
        if !(gnorm2 > 1e-30) {
            break;
        }
        let mut accepted = false;
        while step > 1e-16 {
            let trial: Vec<CMatrix> = ms
                .iter()
                .zip(&grad)
                .map(|(m, g)| m - g.scale(step))
                .collect();
            if let Some(tev) = evaluate(targets, &trial) {
                if tev.objective <= ev.objective - sched.armijo * step * gnorm2 {
                    ms = trial;
                    ev = tev;
                    step *= sched.grow;
                    accepted = true;
                    break;
                }
            }
            step *= sched.shrink;
        }
        if !accepted {
            break;
        }
    }
    RestartResult {
        residual: ev.per_outcome.iter().copied().fold(0.0, f64::max),
        objective: ev.objective,
        effects: ev.effects,
        reseeds,
    }
}

/// Searches for a POVM whose outcome `k` has (near) zero probability on
/// state `k mod n_states`.
///
/// Returns the best certificate over the restarts tried; `certified` is set
/// iff its residual is at most `config.tol`. An uncertified result says
/// nothing about infeasibility.
pub fn find_antidistinguishing_measurement(
    states: &[PureState],
    n_outcomes: Option<usize>,
    config: &SolverConfig,
) -> Result<SolveOutcome> {
    config.validate()?;
    let first = states
        .first()
        .ok_or_else(|| AntidistError::InvalidArgument("no states given".into()))?;
    let dim = first.dim();
    if states.iter().any(|s| s.dim() != dim) {
        return Err(AntidistError::InvalidArgument(
            "states have different dimensions".into(),
        ));
    }
    let n_outcomes = n_outcomes.unwrap_or(states.len());
    if n_outcomes == 0 {
        return Err(AntidistError::InvalidArgument(
            "n_outcomes must be >= 1".into(),
        ));
    }
    let assignment = default_assignment(states.len(), n_outcomes);
    let targets: Vec<CMatrix> = assignment.iter().map(|&i| states[i].projector()).collect();

    let mut best: Option<(usize, RestartResult)> = None;
    let mut reseeds = 0;
    let mut used = 0;
    while used < config.restarts {
        let end = (used + BATCH).min(config.restarts);
        let batch: Vec<RestartResult> = (used..end)
            .into_par_iter()
            .map(|r| run_restart(&targets, dim, config, r))
            .collect();
        for (offset, res) in batch.into_iter().enumerate() {
            reseeds += res.reseeds;
            let better = match &best {
                None => true,
                Some((_, b)) => {
                    res.residual < b.residual
                        || (res.residual == b.residual && res.objective < b.objective)
                }
            };
            if better {
                best = Some((used + offset, res));
            }
        }
        used = end;
        if best.as_ref().is_some_and(|(_, b)| b.residual <= config.tol) {
            break;
        }
    }
    let (best_restart, best) = best.expect("at least one restart ran");
    let povm = Povm::from_effects_unchecked(
        best.effects
            .into_iter()
            .map(Effect::from_matrix_unchecked)
            .collect(),
    );
    Ok(SolveOutcome {
        certified: best.residual <= config.tol,
        certificate: ExclusionCertificate {
            povm,
            assignment,
            residual: best.residual,
        },
        restarts_used: used,
        best_restart,
        reseeds,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub passed: bool,
    pub povm: Option<PovmReport>,
    /// Born probability of each outcome on the state it claims to exclude.
    pub per_outcome: Vec<f64>,
    pub residual: f64,
    pub tol: f64,
    pub failures: Vec<String>,
}

/// Recomputes POVM validity and every exclusion probability from scratch.
pub fn verify_certificate(
    states: &[PureState],
    cert: &ExclusionCertificate,
    tol: f64,
) -> VerificationReport {
    let mut failures = Vec::new();
    let mut report = VerificationReport {
        passed: false,
        povm: None,
        per_outcome: Vec::new(),
        residual: f64::INFINITY,
        tol,
        failures: Vec::new(),
    };
    let effects = cert.povm.effects();
    let dim = states.first().map(PureState::dim);
    if states.is_empty() {
        failures.push("no states".to_string());
    } else if states.iter().any(|s| Some(s.dim()) != dim) {
        failures.push("states have different dimensions".to_string());
    } else if effects.iter().any(|e| Some(e.dim()) != dim) {
        failures.push("effect dimension does not match the states".to_string());
    }
    if cert.assignment.len() != effects.len() {
        failures.push(format!(
            "assignment covers {} outcomes but the POVM has {}",
            cert.assignment.len(),
            effects.len()
        ));
    }
    if let Some(bad) = cert.assignment.iter().find(|&&i| i >= states.len()) {
        failures.push(format!(
            "assignment names state {bad}, which does not exist"
        ));
    }
    if !failures.is_empty() {
        report.failures = failures;
        return report;
    }

    match validate_povm(effects) {
        Ok(povm_report) => {
            if !povm_report.is_valid() {
                failures.push(format!("invalid POVM: {povm_report}"));
            }
            report.povm = Some(povm_report);
        }
        Err(e) => failures.push(format!("invalid POVM: {e}")),
    }

    let mut per_outcome = Vec::with_capacity(effects.len());
    for (k, (e, &i)) in effects.iter().zip(&cert.assignment).enumerate() {
        match born_probability(&states[i].density(), e) {
            Ok(p) => per_outcome.push(p),
            Err(err) => {
                failures.push(format!("outcome {k}: {err}"));
                per_outcome.push(f64::INFINITY);
            }
        }
    }
    let residual = per_outcome.iter().copied().fold(0.0, f64::max);
    if residual > tol {
        failures.push(format!("residual {residual:e} exceeds tolerance {tol:e}"));
    }
    report.per_outcome = per_outcome;
    report.residual = residual;
    report.passed = failures.is_empty();
    report.failures = failures;
    report
}

/// Born-rule credence table: rows are states, columns are POVM outcomes.
pub fn born_credences(states: &[PureState], povm: &Povm) -> Result<CredenceTable> {
    let rows = states
        .iter()
        .map(|s| povm.probabilities(s))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    CredenceTable::new(
        (0..states.len()).map(|i| format!("s{i}")).collect(),
        (0..povm.len()).map(|k| format!("r{k}")).collect(),
        rows,
        qcore::AGGREGATE_TOL,
    )
    .map_err(|e| AntidistError::InvalidArgument(e.to_string()))
}
