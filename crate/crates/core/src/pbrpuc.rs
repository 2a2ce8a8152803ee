//! Two-system joint models and the preparation-independence conditions.
//!
//! A [`JointModel`] has ontic spaces for each subsystem, one for the
//! composite, and a partial injective embedding of pairs `(ω₁, ω₂)` into the
//! composite space. Each subsystem is prepared in `φ` or `ψ`, giving four
//! joint preparations in the fixed order `φφ, φψ, ψφ, ψψ`, each a
//! distribution over the composite space. A single joint readout responds
//! to the composite state only.
//!
//! Conditions:
//!
//! - CPA: every pair `(ω₁, ω₂)` has an image in the composite space.
//! - NCA (per preparation pair): all weight lies on the embedded product and
//!   the pulled-back distribution is the product of its marginals.
//! - PIP: CPA, NCA for all four pairs, and each subsystem's marginal depends
//!   only on its own preparation.
//! - PUC: with both preparations chosen by fair coins, the posterior over
//!   the pair given the composite state factorizes.
//!
//! The audits compare those hypotheses with the ontic distinctness of `φ`
//! and `ψ` on the subsystems. Audits operate on exactly two subsystems.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

use crate::antidist::{antidistinguishable_credences, born_credences};
use crate::ontmodel::{dirichlet_uniform, CredenceTable, OnticSpace, TheoryModel, STOCHASTIC_TOL};
use crate::qcore::{tensor, Povm, PureState};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum JointError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid model: {0}")]
    InvalidModel(String),
}

pub type Result<T> = std::result::Result<T, JointError>;

impl From<crate::ontmodel::ModelError> for JointError {
    fn from(e: crate::ontmodel::ModelError) -> Self {
        JointError::InvalidModel(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Phi,
    Psi,
}

impl Side {
    pub const BOTH: [Side; 2] = [Side::Phi, Side::Psi];

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrepPair {
    PhiPhi,
    PhiPsi,
    PsiPhi,
    PsiPsi,
}

impl PrepPair {
    pub const ALL: [PrepPair; 4] = [
        PrepPair::PhiPhi,
        PrepPair::PhiPsi,
        PrepPair::PsiPhi,
        PrepPair::PsiPsi,
    ];

    pub fn from_sides(first: Side, second: Side) -> Self {
        Self::ALL[2 * first.index() + second.index()]
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn first(self) -> Side {
        Side::BOTH[self.index() / 2]
    }

    pub fn second(self) -> Side {
        Side::BOTH[self.index() % 2]
    }

    pub fn key(self) -> &'static str {
        ["phiphi", "phipsi", "psiphi", "psipsi"][self.index()]
    }

    pub fn from_key(key: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.key() == key)
    }
}

/// Two independent fair coins choose the preparations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrepScenario {
    pub prior: [f64; 4],
}

impl PrepScenario {
    pub fn uniform() -> Self {
        Self { prior: [0.25; 4] }
    }
}

impl Default for PrepScenario {
    fn default() -> Self {
        Self::uniform()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Embedded {
    pub first: usize,
    pub second: usize,
    pub joint: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "JointModelFile", into = "JointModelFile")]
pub struct JointModel {
    omega1: OnticSpace,
    omega2: OnticSpace,
    omega12: OnticSpace,
    embedding: Vec<Embedded>,
    /// Indexed by [`PrepPair::index`].
    joint_preps: Vec<Vec<f64>>,
    outcomes: Vec<String>,
    /// `[composite state][outcome]`
    responses: Vec<Vec<f64>>,
    /// `image[i][j]` = composite index of `(ω₁ = i, ω₂ = j)`.
    image: Vec<Vec<Option<usize>>>,
}

fn check_row(what: &str, row: &[f64], len: usize) -> Result<()> {
    if row.len() != len {
        return Err(JointError::InvalidModel(format!(
            "{what} has {} entries, expected {len}",
            row.len()
        )));
    }
    if row.iter().any(|p| !p.is_finite() || *p < 0.0 || *p > 1.0) {
        return Err(JointError::InvalidModel(format!(
            "{what} has entries outside [0, 1]"
        )));
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > STOCHASTIC_TOL {
        return Err(JointError::InvalidModel(format!("{what} sums to {sum}")));
    }
    Ok(())
}

impl JointModel {
    pub fn new(
        omega1: OnticSpace,
        omega2: OnticSpace,
        omega12: OnticSpace,
        embedding: Vec<Embedded>,
        joint_preps: Vec<Vec<f64>>,
        outcomes: Vec<String>,
        responses: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let mut image = vec![vec![None; omega2.len()]; omega1.len()];
        let mut hit = vec![false; omega12.len()];
        for e in &embedding {
            if e.first >= omega1.len() || e.second >= omega2.len() || e.joint >= omega12.len() {
                return Err(JointError::InvalidModel(format!(
                    "embedding triple {e:?} is out of range"
                )));
            }
            if image[e.first][e.second].is_some() {
                return Err(JointError::InvalidModel(format!(
                    "pair ({}, {}) is embedded twice",
                    omega1.labels()[e.first],
                    omega2.labels()[e.second]
                )));
            }
            if hit[e.joint] {
                return Err(JointError::InvalidModel(format!(
                    "embedding is not injective: '{}' is the image of two pairs",
                    omega12.labels()[e.joint]
                )));
            }
            hit[e.joint] = true;
            image[e.first][e.second] = Some(e.joint);
        }
        if joint_preps.len() != 4 {
            return Err(JointError::InvalidModel(format!(
                "expected 4 joint preparations, got {}",
                joint_preps.len()
            )));
        }
        for (pair, row) in PrepPair::ALL.iter().zip(&joint_preps) {
            check_row(
                &format!("joint preparation {}", pair.key()),
                row,
                omega12.len(),
            )?;
        }
        if outcomes.is_empty() {
            return Err(JointError::InvalidModel("no outcomes".into()));
        }
        if responses.len() != omega12.len() {
            return Err(JointError::InvalidModel(format!(
                "responses cover {} composite states, expected {}",
                responses.len(),
                omega12.len()
            )));
        }
        for (w, row) in responses.iter().enumerate() {
            check_row(
                &format!("responses in state '{}'", omega12.labels()[w]),
                row,
                outcomes.len(),
            )?;
        }
        Ok(Self {
            omega1,
            omega2,
            omega12,
            embedding,
            joint_preps,
            outcomes,
            responses,
            image,
        })
    }

    pub fn omega1(&self) -> &OnticSpace {
        &self.omega1
    }

    pub fn omega2(&self) -> &OnticSpace {
        &self.omega2
    }

    pub fn omega12(&self) -> &OnticSpace {
        &self.omega12
    }

    pub fn embedding(&self) -> &[Embedded] {
        &self.embedding
    }

    pub fn outcomes(&self) -> &[String] {
        &self.outcomes
    }

    pub fn responses(&self) -> &[Vec<f64>] {
        &self.responses
    }

    pub fn joint_prep(&self, pair: PrepPair) -> &[f64] {
        &self.joint_preps[pair.index()]
    }

    pub fn image(&self, first: usize, second: usize) -> Option<usize> {
        self.image[first][second]
    }

    /// Pulled-back weights `p(ω₁, ω₂)` and the weight left outside the
    /// embedded product.
    pub fn pullback(&self, pair: PrepPair) -> (Vec<Vec<f64>>, f64) {
        let prep = self.joint_prep(pair);
        let mut on_product = vec![false; self.omega12.len()];
        let grid = self
            .image
            .iter()
            .map(|row| {
                row.iter()
                    .map(|img| match img {
                        Some(w) => {
                            on_product[*w] = true;
                            prep[*w]
                        }
                        None => 0.0,
                    })
                    .collect()
            })
            .collect();
        let outside = prep
            .iter()
            .zip(&on_product)
            .filter(|(_, on)| !**on)
            .map(|(p, _)| p)
            .sum();
        (grid, outside)
    }

    /// Predicted credence of each outcome for each joint preparation.
    pub fn credence_table(&self) -> CredenceTable {
        let rows = PrepPair::ALL
            .iter()
            .map(|&pair| {
                let prep = self.joint_prep(pair);
                let mut out = vec![0.0; self.outcomes.len()];
                for (w, &p) in prep.iter().enumerate() {
                    for (acc, r) in out.iter_mut().zip(&self.responses[w]) {
                        *acc += p * r;
                    }
                }
                out
            })
            .collect();
        CredenceTable {
            acts: PrepPair::ALL.iter().map(|p| p.key().to_string()).collect(),
            outcomes: self.outcomes.clone(),
            rows,
        }
    }
}

/// JSON layout of a [`JointModel`]. `ontic` is the composite space;
/// embedding triples and responses refer to states by label.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointModelFile {
    pub omega1: Vec<String>,
    pub omega2: Vec<String>,
    pub ontic: Vec<String>,
    pub outcomes: Vec<String>,
    pub embedding: Vec<(String, String, String)>,
    pub joint_prep: BTreeMap<PrepPair, Vec<f64>>,
    pub response: indexmap::IndexMap<String, Vec<f64>>,
}

impl TryFrom<JointModelFile> for JointModel {
    type Error = JointError;

    fn try_from(f: JointModelFile) -> Result<Self> {
        let omega1 = OnticSpace::new(f.omega1)?;
        let omega2 = OnticSpace::new(f.omega2)?;
        let omega12 = OnticSpace::new(f.ontic)?;
        let lookup = |space: &OnticSpace, label: &str| {
            space
                .index_of(label)
                .ok_or_else(|| JointError::InvalidModel(format!("unknown ontic state '{label}'")))
        };
        let embedding = f
            .embedding
            .iter()
            .map(|(a, b, c)| {
                Ok(Embedded {
                    first: lookup(&omega1, a)?,
                    second: lookup(&omega2, b)?,
                    joint: lookup(&omega12, c)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let joint_preps = PrepPair::ALL
            .iter()
            .map(|p| {
                f.joint_prep.get(p).cloned().ok_or_else(|| {
                    JointError::InvalidModel(format!("missing joint preparation '{}'", p.key()))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if f.response.len() != omega12.len() {
            return Err(JointError::InvalidModel(format!(
                "responses given for {} states, composite space has {}",
                f.response.len(),
                omega12.len()
            )));
        }
        let responses = omega12
            .labels()
            .iter()
            .map(|l| {
                f.response.get(l).cloned().ok_or_else(|| {
                    JointError::InvalidModel(format!("no responses for state '{l}'"))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        JointModel::new(
            omega1,
            omega2,
            omega12,
            embedding,
            joint_preps,
            f.outcomes,
            responses,
        )
    }
}

impl From<JointModel> for JointModelFile {
    fn from(m: JointModel) -> Self {
        let l1 = m.omega1.labels();
        let l2 = m.omega2.labels();
        let l12 = m.omega12.labels();
        JointModelFile {
            embedding: m
                .embedding
                .iter()
                .map(|e| {
                    (
                        l1[e.first].clone(),
                        l2[e.second].clone(),
                        l12[e.joint].clone(),
                    )
                })
                .collect(),
            joint_prep: PrepPair::ALL
                .iter()
                .map(|&p| (p, m.joint_preps[p.index()].clone()))
                .collect(),
            response: l12
                .iter()
                .cloned()
                .zip(m.responses.iter().cloned())
                .collect(),
            omega1: l1.to_vec(),
            omega2: l2.to_vec(),
            ontic: l12.to_vec(),
            outcomes: m.outcomes,
        }
    }
}

// ---------------------------------------------------------------------------
// Conditions

pub fn cpa_check(jm: &JointModel) -> bool {
    jm.image.iter().all(|row| row.iter().all(Option::is_some))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NcaReport {
    pub pair: PrepPair,
    pub passed: bool,
    pub outside_weight: f64,
    pub max_factorization_gap: f64,
    /// Cell `(ω₁, ω₂)` where the gap is largest.
    pub worst_cell: Option<(String, String)>,
    pub reason: Option<String>,
}

/// Max-norm distance between a 2-D table and the product of its marginals.
fn factorization_gap(grid: &[Vec<f64>]) -> (f64, Option<(usize, usize)>) {
    let n2 = grid.first().map_or(0, Vec::len);
    let m1: Vec<f64> = grid.iter().map(|r| r.iter().sum()).collect();
    let m2: Vec<f64> = (0..n2).map(|j| grid.iter().map(|r| r[j]).sum()).collect();
    let mut gap = 0.0;
    let mut worst = None;
    for (i, row) in grid.iter().enumerate() {
        for (j, &p) in row.iter().enumerate() {
            let d = (p - m1[i] * m2[j]).abs();
            if d > gap {
                gap = d;
                worst = Some((i, j));
            }
        }
    }
    (gap, worst)
}

pub fn nca_check(jm: &JointModel, pair: PrepPair, tol: f64) -> NcaReport {
    if !cpa_check(jm) {
        return NcaReport {
            pair,
            passed: false,
            outside_weight: f64::NAN,
            max_factorization_gap: f64::NAN,
            worst_cell: None,
            reason: Some("support outside product".into()),
        };
    }
    let (grid, outside) = jm.pullback(pair);
    let (gap, worst) = factorization_gap(&grid);
    let mut reasons = Vec::new();
    if outside > tol {
        reasons.push(format!("weight {outside:e} outside the embedded product"));
    }
    if gap > tol {
        reasons.push(format!("factorization gap {gap:e}"));
    }
    NcaReport {
        pair,
        passed: reasons.is_empty(),
        outside_weight: outside,
        max_factorization_gap: gap,
        worst_cell: worst
            .map(|(i, j)| (jm.omega1.labels()[i].clone(), jm.omega2.labels()[j].clone())),
        reason: (!reasons.is_empty()).then(|| reasons.join("; ")),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipReport {
    pub passed: bool,
    pub cpa: bool,
    pub nca: Vec<NcaReport>,
    /// Largest change in one subsystem's marginal when only the other
    /// subsystem's preparation changes.
    pub marginal_dependence: f64,
    pub reason: Option<String>,
}

fn subsystem_marginals(jm: &JointModel, pair: PrepPair) -> (Vec<f64>, Vec<f64>) {
    let (grid, _) = jm.pullback(pair);
    let n2 = jm.omega2.len();
    let m1 = grid.iter().map(|r| r.iter().sum()).collect();
    let m2 = (0..n2).map(|j| grid.iter().map(|r| r[j]).sum()).collect();
    (m1, m2)
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

pub fn pip_check(jm: &JointModel, scenario: &PrepScenario, tol: f64) -> PipReport {
    let _ = scenario;
    let cpa = cpa_check(jm);
    if !cpa {
        return PipReport {
            passed: false,
            cpa,
            nca: Vec::new(),
            marginal_dependence: f64::NAN,
            reason: Some("CPA fails: the product space is not fully embedded".into()),
        };
    }
    let nca: Vec<NcaReport> = PrepPair::ALL
        .iter()
        .map(|&p| nca_check(jm, p, tol))
        .collect();
    let marginals: Vec<(Vec<f64>, Vec<f64>)> = PrepPair::ALL
        .iter()
        .map(|&p| subsystem_marginals(jm, p))
        .collect();
    let mut dependence: f64 = 0.0;
    for side in Side::BOTH {
        // Subsystem 1 prepared in `side`, subsystem 2 varies; and vice versa.
        let a = PrepPair::from_sides(side, Side::Phi).index();
        let b = PrepPair::from_sides(side, Side::Psi).index();
        dependence = dependence.max(max_abs_diff(&marginals[a].0, &marginals[b].0));
        let a = PrepPair::from_sides(Side::Phi, side).index();
        let b = PrepPair::from_sides(Side::Psi, side).index();
        dependence = dependence.max(max_abs_diff(&marginals[a].1, &marginals[b].1));
    }
    let mut reasons: Vec<String> = nca
        .iter()
        .filter(|r| !r.passed)
        .map(|r| format!("NCA fails for {}", r.pair.key()))
        .collect();
    if dependence > tol {
        reasons.push(format!(
            "a subsystem marginal depends on the other preparation (gap {dependence:e})"
        ));
    }
    PipReport {
        passed: reasons.is_empty(),
        cpa,
        nca,
        marginal_dependence: dependence,
        reason: (!reasons.is_empty()).then(|| reasons.join("; ")),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PucReport {
    pub passed: bool,
    pub max_gap: f64,
    pub worst_state: Option<String>,
    pub states_checked: usize,
}

/// Posterior over the four preparation pairs given composite state `w`, or
/// `None` if no preparation reaches it.
pub fn pair_posterior(jm: &JointModel, scenario: &PrepScenario, w: usize) -> Option<[f64; 4]> {
    let mut q = [0.0; 4];
    for pair in PrepPair::ALL {
        q[pair.index()] = scenario.prior[pair.index()] * jm.joint_prep(pair)[w];
    }
    let m: f64 = q.iter().sum();
    if m <= 0.0 {
        return None;
    }
    for x in &mut q {
        *x /= m;
    }
    Some(q)
}

pub fn puc_check(jm: &JointModel, scenario: &PrepScenario, tol: f64) -> PucReport {
    let mut max_gap = 0.0;
    let mut worst = None;
    let mut checked = 0;
    for w in 0..jm.omega12.len() {
        let Some(q) = pair_posterior(jm, scenario, w) else {
            continue;
        };
        checked += 1;
        let grid = vec![vec![q[0], q[1]], vec![q[2], q[3]]];
        let (gap, _) = factorization_gap(&grid);
        if gap > max_gap {
            max_gap = gap;
            worst = Some(w);
        }
    }
    PucReport {
        passed: max_gap <= tol,
        max_gap,
        worst_state: worst.map(|w| jm.omega12.labels()[w].clone()),
        states_checked: checked,
    }
}

/// Responses for a product-built joint model, rows indexed by
/// `i * |Ω₂| + j` for the pair `(ω₁ = i, ω₂ = j)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointResponses {
    pub outcomes: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

/// Composite space equal to the product, preparations equal to products of
/// the components' `φ` (act 0) and `ψ` (act 1) preparations.
pub fn build_product_model(
    m1: &TheoryModel,
    m2: &TheoryModel,
    joint_responses: JointResponses,
) -> Result<JointModel> {
    for (name, m) in [("first", m1), ("second", m2)] {
        if m.n_acts() != 2 {
            return Err(JointError::InvalidArgument(format!(
                "{name} component must have exactly the two acts phi, psi; it has {}",
                m.n_acts()
            )));
        }
    }
    let (n1, n2) = (m1.ontic().len(), m2.ontic().len());
    if joint_responses.rows.len() != n1 * n2 {
        return Err(JointError::InvalidArgument(format!(
            "joint responses cover {} states, product space has {}",
            joint_responses.rows.len(),
            n1 * n2
        )));
    }
    let mut labels = Vec::with_capacity(n1 * n2);
    let mut embedding = Vec::with_capacity(n1 * n2);
    for (i, a) in m1.ontic().labels().iter().enumerate() {
        for (j, b) in m2.ontic().labels().iter().enumerate() {
            labels.push(format!("<{a},{b}>"));
            embedding.push(Embedded {
                first: i,
                second: j,
                joint: i * n2 + j,
            });
        }
    }
    let joint_preps = PrepPair::ALL
        .iter()
        .map(|pair| {
            let p1 = m1.preparations().row(pair.first().index());
            let p2 = m2.preparations().row(pair.second().index());
            p1.iter()
                .flat_map(|x| p2.iter().map(move |y| x * y))
                .collect()
        })
        .collect();
    JointModel::new(
        m1.ontic().clone(),
        m2.ontic().clone(),
        OnticSpace::with_cap(labels, usize::MAX)?,
        embedding,
        joint_preps,
        joint_responses.outcomes,
        joint_responses.rows,
    )
}

// ---------------------------------------------------------------------------
// Audits

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AuditMode {
    Pip,
    Puc,
}

/// Why the four preparations are not antidistinguishable: an outcome every
/// preparation gives positive credence, with a composite state reached by
/// all four that responds with it, if there is one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NonExclusion {
    pub outcome: String,
    pub credences: [f64; 4],
    pub shared_state: Option<String>,
}

/// A composite state whose own contribution already gives every preparation
/// credence above `zero_tol` at one outcome. Together with antidistinguishable
/// credences this is a contradiction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpossibilityWitness {
    pub state: String,
    /// The subsystem pair embedded at `state`, when it is a product state.
    pub pair: Option<(String, String)>,
    pub outcome: String,
    pub contributions: [f64; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub mode: AuditMode,
    /// The four joint preparations are antidistinguishable.
    pub h1: bool,
    /// PIP (mode `pip`) or PUC (mode `puc`) holds.
    pub h2_or_puc: bool,
    /// `φ` and `ψ` have disjoint supports on at least one subsystem.
    pub conclusion: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub witness: Option<ImpossibilityWitness>,
    pub consistent: bool,
    /// `h1 ∧ h2_or_puc ∧ ¬conclusion` with no witness: the two-system data
    /// do not force a contradiction.
    pub unresolved: bool,
    pub subsystem_disjoint: [bool; 2],
    /// For each outcome, the preparation pairs it excludes.
    pub exclusions: Vec<Vec<PrepPair>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub non_exclusion: Option<NonExclusion>,
    /// Both conditions are reported whatever the mode; only the mode's one
    /// enters `h2_or_puc`.
    pub pip: PipReport,
    pub puc: PucReport,
    pub zero_tol: f64,
}

/// Subsystem states reached (above `zero_tol`) by any joint preparation
/// that prepares `side` on subsystem `which` (0 or 1).
pub fn subsystem_support(jm: &JointModel, which: usize, side: Side, zero_tol: f64) -> Vec<usize> {
    let n = if which == 0 {
        jm.omega1.len()
    } else {
        jm.omega2.len()
    };
    let mut hit = vec![false; n];
    for pair in PrepPair::ALL {
        let s = if which == 0 {
            pair.first()
        } else {
            pair.second()
        };
        if s != side {
            continue;
        }
        let (grid, _) = jm.pullback(pair);
        for (i, row) in grid.iter().enumerate() {
            for (j, &p) in row.iter().enumerate() {
                if p > zero_tol {
                    hit[if which == 0 { i } else { j }] = true;
                }
            }
        }
    }
    (0..n).filter(|&i| hit[i]).collect()
}

fn find_witness(jm: &JointModel, zero_tol: f64) -> Option<ImpossibilityWitness> {
    for w in 0..jm.omega12.len() {
        for (k, &r) in jm.responses[w].iter().enumerate() {
            let contributions = PrepPair::ALL.map(|p| jm.joint_prep(p)[w] * r);
            if contributions.iter().all(|c| *c > zero_tol) {
                let pair = jm.embedding.iter().find(|e| e.joint == w).map(|e| {
                    (
                        jm.omega1.labels()[e.first].clone(),
                        jm.omega2.labels()[e.second].clone(),
                    )
                });
                return Some(ImpossibilityWitness {
                    state: jm.omega12.labels()[w].clone(),
                    pair,
                    outcome: jm.outcomes[k].clone(),
                    contributions,
                });
            }
        }
    }
    None
}

fn explain_non_exclusion(
    jm: &JointModel,
    cred: &CredenceTable,
    zero_tol: f64,
) -> Option<NonExclusion> {
    let k = (0..cred.n_outcomes()).find(|&k| cred.rows.iter().all(|row| row[k] > zero_tol))?;
    let shared_state = (0..jm.omega12.len())
        .find(|&w| {
            jm.responses[w][k] > zero_tol
                && PrepPair::ALL
                    .iter()
                    .all(|&p| jm.joint_prep(p)[w] > zero_tol)
        })
        .map(|w| jm.omega12.labels()[w].clone());
    Some(NonExclusion {
        outcome: jm.outcomes[k].clone(),
        credences: [
            cred.rows[0][k],
            cred.rows[1][k],
            cred.rows[2][k],
            cred.rows[3][k],
        ],
        shared_state,
    })
}

fn audit(jm: &JointModel, scenario: &PrepScenario, zero_tol: f64, mode: AuditMode) -> AuditReport {
    let cred = jm.credence_table();
    let anti = antidistinguishable_credences(&cred, zero_tol);
    let h1 = anti.antidistinguishable;
    let pip = pip_check(jm, scenario, zero_tol);
    let puc = puc_check(jm, scenario, zero_tol);
    let hypothesis = match mode {
        AuditMode::Pip => pip.passed,
        AuditMode::Puc => puc.passed,
    };
    let disjoint = [0, 1].map(|which| {
        let a = subsystem_support(jm, which, Side::Phi, zero_tol);
        let b = subsystem_support(jm, which, Side::Psi, zero_tol);
        a.iter().all(|x| !b.contains(x))
    });
    let conclusion = disjoint[0] || disjoint[1];
    let (witness, unresolved) = if h1 && hypothesis && !conclusion {
        let w = find_witness(jm, zero_tol);
        let unresolved = w.is_none();
        (w, unresolved)
    } else {
        (None, false)
    };
    AuditReport {
        mode,
        h1,
        h2_or_puc: hypothesis,
        conclusion,
        consistent: witness.is_none(),
        witness,
        unresolved,
        subsystem_disjoint: disjoint,
        exclusions: anti
            .excluded
            .iter()
            .map(|acts| acts.iter().map(|&a| PrepPair::ALL[a]).collect())
            .collect(),
        non_exclusion: if h1 {
            None
        } else {
            explain_non_exclusion(jm, &cred, zero_tol)
        },
        pip,
        puc,
        zero_tol,
    }
}

/// Antidistinguishability and PIP against subsystem ontic distinctness.
pub fn pbr_audit(jm: &JointModel, scenario: &PrepScenario, zero_tol: f64) -> AuditReport {
    audit(jm, scenario, zero_tol, AuditMode::Pip)
}

/// As [`pbr_audit`] with the PUC in place of the PIP.
pub fn puc_audit(jm: &JointModel, scenario: &PrepScenario, zero_tol: f64) -> AuditReport {
    audit(jm, scenario, zero_tol, AuditMode::Puc)
}

// ---------------------------------------------------------------------------
// Fixtures

/// One ontic state per quantum state, delta preparations, and responses
/// equal to the Born probabilities of `povm` on the corresponding state.
pub fn psi_ontic_model(states: &[PureState], povm: &Povm) -> Result<TheoryModel> {
    let cred =
        born_credences(states, povm).map_err(|e| JointError::InvalidArgument(e.to_string()))?;
    let n = states.len();
    let prep = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    Ok(TheoryModel::screened(prep, normalize_rows(cred.rows))?)
}

/// Born probabilities clamped into `[0, 1]` can drift off unit row sums by
/// ~1e-15; fold that into the largest entry.
fn normalize_rows(rows: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    rows.into_iter()
        .map(|mut row| {
            let err = 1.0 - row.iter().sum::<f64>();
            let big = (0..row.len())
                .max_by(|&a, &b| row[a].total_cmp(&row[b]))
                .unwrap_or(0);
            row[big] = (row[big] + err).clamp(0.0, 1.0);
            row
        })
        .collect()
}

/// Two copies of the two-state ψ-ontic component, with joint responses
/// given by Born probabilities of `joint_povm` on the product states.
pub fn psi_ontic_joint(phi: &PureState, psi: &PureState, joint_povm: &Povm) -> Result<JointModel> {
    let component = TheoryModel::new(
        OnticSpace::new(vec!["l_phi".into(), "l_psi".into()])?,
        vec!["phi".into(), "psi".into()],
        vec!["r0".into()],
        crate::ontmodel::PreparationMap::new(vec![vec![1.0, 0.0], vec![0.0, 1.0]])?,
        crate::ontmodel::ResponseTable::act_independent(2, vec![vec![1.0], vec![1.0]])?,
    )?;
    let sides = [phi, psi];
    let mut rows = Vec::with_capacity(4);
    for a in sides {
        for b in sides {
            let s = tensor(a, b).map_err(|e| JointError::InvalidArgument(e.to_string()))?;
            rows.push(
                joint_povm
                    .probabilities(&s)
                    .map_err(|e| JointError::InvalidArgument(e.to_string()))?,
            );
        }
    }
    build_product_model(
        &component,
        &component,
        JointResponses {
            outcomes: (0..joint_povm.len()).map(|k| format!("r{k}")).collect(),
            rows: normalize_rows(rows),
        },
    )
}

/// Component with supports `{l_phi, l_0}` and `{l_0, l_psi}` overlapping on
/// `l_0`.
pub fn overlap_component() -> TheoryModel {
    TheoryModel::new(
        OnticSpace::new(vec!["l_phi".into(), "l_0".into(), "l_psi".into()]).unwrap(),
        vec!["phi".into(), "psi".into()],
        vec!["r0".into()],
        crate::ontmodel::PreparationMap::new(vec![vec![0.5, 0.5, 0.0], vec![0.0, 0.5, 0.5]])
            .unwrap(),
        crate::ontmodel::ResponseTable::act_independent(2, vec![vec![1.0]; 3]).unwrap(),
    )
    .expect("fixture is valid")
}

fn overlap_fixture() -> JointModel {
    let c = overlap_component();
    // Product states away from l_0 respond deterministically; anything
    // touching l_0 responds uniformly.
    let mut rows = Vec::with_capacity(9);
    for i in 0..3 {
        for j in 0..3 {
            if i == 1 || j == 1 {
                rows.push(vec![0.25; 4]);
            } else {
                let mut r = vec![0.0; 4];
                r[(i / 2) * 2 + j / 2] = 1.0;
                rows.push(r);
            }
        }
    }
    build_product_model(
        &c,
        &c,
        JointResponses {
            outcomes: (0..4).map(|k| format!("r{k}")).collect(),
            rows,
        },
    )
    .expect("fixture is valid")
}

/// Seed and draw index at which [`search_puc_not_pip`] found the committed
/// PUC-without-PIP fixture.
pub const PUC_NOT_PIP_SEED: u64 = 20_240_611;
pub const PUC_NOT_PIP_DRAW: usize = 609;

fn puc_not_pip_fixture() -> JointModel {
    let labels = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    let file = JointModelFile {
        omega1: labels(&["a0", "a1"]),
        omega2: labels(&["b0", "b1"]),
        ontic: labels(&["<a0,b0>", "<a0,b1>", "<a1,b0>", "<a1,b1>"]),
        outcomes: labels(&["r0", "r1", "r2"]),
        embedding: vec![
            ("a0".into(), "b0".into(), "<a0,b0>".into()),
            ("a0".into(), "b1".into(), "<a0,b1>".into()),
            ("a1".into(), "b0".into(), "<a1,b0>".into()),
            ("a1".into(), "b1".into(), "<a1,b1>".into()),
        ],
        joint_prep: [
            (PrepPair::PhiPhi, vec![0.25, 0.125, 0.375, 0.25]),
            (PrepPair::PhiPsi, vec![0.25, 0.25, 0.25, 0.25]),
            (PrepPair::PsiPhi, vec![0.375, 0.125, 0.375, 0.125]),
            (PrepPair::PsiPsi, vec![0.375, 0.25, 0.25, 0.125]),
        ]
        .into_iter()
        .collect(),
        response: [
            ("<a0,b0>".to_string(), vec![0.375, 0.375, 0.25]),
            ("<a0,b1>".to_string(), vec![0.5, 0.25, 0.25]),
            ("<a1,b0>".to_string(), vec![0.25, 0.625, 0.125]),
            ("<a1,b1>".to_string(), vec![0.25, 0.375, 0.375]),
        ]
        .into_iter()
        .collect(),
    };
    JointModel::try_from(file).expect("fixture is valid")
}

/// Antidistinguishable four-state model satisfying CPA and the PUC in which
/// `φ` and `ψ` overlap on both subsystems, yet no composite state is
/// reached by all four preparations.
pub fn puc_two_system_gap() -> JointModel {
    let labels = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    let file = JointModelFile {
        omega1: labels(&["x", "y"]),
        omega2: labels(&["u", "v"]),
        ontic: labels(&["<x,u>", "<x,v>", "<y,u>", "<y,v>"]),
        outcomes: labels(&["r0", "r1", "r2"]),
        embedding: vec![
            ("x".into(), "u".into(), "<x,u>".into()),
            ("x".into(), "v".into(), "<x,v>".into()),
            ("y".into(), "u".into(), "<y,u>".into()),
            ("y".into(), "v".into(), "<y,v>".into()),
        ],
        joint_prep: [
            (PrepPair::PhiPhi, vec![1.0, 0.0, 0.0, 0.0]),
            (PrepPair::PhiPsi, vec![0.0, 0.0, 1.0, 0.0]),
            (PrepPair::PsiPhi, vec![1.0, 0.0, 0.0, 0.0]),
            (PrepPair::PsiPsi, vec![0.0, 0.0, 0.0, 1.0]),
        ]
        .into_iter()
        .collect(),
        response: [
            ("<x,u>".to_string(), vec![1.0, 0.0, 0.0]),
            ("<x,v>".to_string(), vec![1.0, 0.0, 0.0]),
            ("<y,u>".to_string(), vec![0.0, 1.0, 0.0]),
            ("<y,v>".to_string(), vec![0.0, 0.0, 1.0]),
        ]
        .into_iter()
        .collect(),
    };
    JointModel::try_from(file).expect("fixture is valid")
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gallery {
    /// ψ-ontic model for `|0⟩, |+⟩` read out in the product computational
    /// basis.
    pub psi_ontic: JointModel,
    /// Component supports overlap on one state.
    pub overlap: JointModel,
    /// CPA model passing the PUC but failing NCA.
    pub puc_not_pip: JointModel,
    /// Antidistinguishable, PUC-satisfying model whose subsystem supports
    /// overlap; see [`puc_two_system_gap`].
    pub puc_gap: JointModel,
}

impl Gallery {
    pub fn get(&self, name: &str) -> Option<&JointModel> {
        match name {
            "g1" | "psi_ontic" => Some(&self.psi_ontic),
            "g2" | "overlap" => Some(&self.overlap),
            "g3" | "puc_not_pip" => Some(&self.puc_not_pip),
            "g4" | "puc_gap" => Some(&self.puc_gap),
            _ => None,
        }
    }
}

pub fn gallery_models() -> Gallery {
    let zero = PureState::basis(2, 0).expect("valid");
    let plus = PureState::plus();
    let readout = Povm::computational(4).expect("valid");
    Gallery {
        psi_ontic: psi_ontic_joint(&zero, &plus, &readout).expect("fixture is valid"),
        overlap: overlap_fixture(),
        puc_not_pip: puc_not_pip_fixture(),
        puc_gap: puc_two_system_gap(),
    }
}

/// Random row on the `1/denominator` grid.
fn grid_row<R: Rng + ?Sized>(rng: &mut R, len: usize, denominator: u32) -> Vec<f64> {
    let mut counts = vec![0u32; len];
    for _ in 0..denominator {
        counts[rng.random_range(0..len)] += 1;
    }
    counts
        .iter()
        .map(|&c| c as f64 / denominator as f64)
        .collect()
}

/// Random search for a CPA model on a 2×2 product passing the PUC at `1e-9`,
/// failing NCA for some pair, and with a consistent, resolved PUC audit.
/// Weights lie on the 1/8 grid so the hit can be committed exactly.
/// Returns the model and the zero-based draw index.
pub fn search_puc_not_pip(seed: u64, max_draws: usize) -> Option<(JointModel, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scenario = PrepScenario::uniform();
    let labels = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    for draw in 0..max_draws {
        let preps: Vec<Vec<f64>> = (0..4).map(|_| grid_row(&mut rng, 4, 8)).collect();
        let responses: Vec<Vec<f64>> = (0..4).map(|_| grid_row(&mut rng, 3, 8)).collect();
        let jm = JointModel::new(
            OnticSpace::new(labels(&["a0", "a1"])).ok()?,
            OnticSpace::new(labels(&["b0", "b1"])).ok()?,
            OnticSpace::new(labels(&["<a0,b0>", "<a0,b1>", "<a1,b0>", "<a1,b1>"])).ok()?,
            (0..4)
                .map(|w| Embedded {
                    first: w / 2,
                    second: w % 2,
                    joint: w,
                })
                .collect(),
            preps,
            labels(&["r0", "r1", "r2"]),
            responses,
        )
        .ok()?;
        // Require some shared state so the PUC is not passed trivially.
        let shared = (0..4).any(|w| {
            PrepPair::ALL
                .iter()
                .filter(|&&p| jm.joint_prep(p)[w] > 0.0)
                .count()
                >= 2
        });
        if !shared || !puc_check(&jm, &scenario, 1e-9).passed {
            continue;
        }
        if PrepPair::ALL
            .iter()
            .all(|&p| nca_check(&jm, p, 1e-9).passed)
        {
            continue;
        }
        let audit = puc_audit(&jm, &scenario, 1e-9);
        if audit.consistent && !audit.unresolved {
            return Some((jm, draw));
        }
    }
    None
}

// ---------------------------------------------------------------------------
// Random joint models

/// Product-built model from two random two-act components. With `sparse`,
/// component preparations and joint responses have random zero patterns.
pub fn random_product_model<R: Rng + ?Sized>(rng: &mut R, sparse: bool) -> JointModel {
    let n1 = rng.random_range(1..=4);
    let n2 = rng.random_range(1..=4);
    let n_out = rng.random_range(2..=4);
    let gen = |rng: &mut R, n: usize| {
        if sparse {
            crate::ontmodel::random_sparse_screened_model(rng, n, 2, 1)
        } else {
            crate::ontmodel::random_screened_model(rng, n, 2, 1)
        }
    };
    let m1 = gen(rng, n1);
    let m2 = gen(rng, n2);
    let rows = (0..n1 * n2)
        .map(|_| {
            if sparse {
                let mut r = vec![0.0; n_out];
                r[rng.random_range(0..n_out)] = 1.0;
                r
            } else {
                dirichlet_uniform(rng, n_out)
            }
        })
        .collect();
    build_product_model(
        &m1,
        &m2,
        JointResponses {
            outcomes: (0..n_out).map(|k| format!("r{k}")).collect(),
            rows,
        },
    )
    .expect("generated model is valid")
}

fn random_composite<R: Rng + ?Sized>(
    rng: &mut R,
    n12: usize,
    joint_preps: Vec<Vec<f64>>,
    deterministic_responses: bool,
) -> JointModel {
    // Embed a random product Ω₁ × Ω₂ into some of the composite states.
    let n1 = rng.random_range(1..=2);
    let n2 = rng.random_range(1..=2);
    let mut slots: Vec<usize> = (0..n12).collect();
    slots.shuffle(rng);
    let n_embedded = (n1 * n2).min(n12);
    let embedding = (0..n_embedded)
        .map(|e| Embedded {
            first: e / n2,
            second: e % n2,
            joint: slots[e],
        })
        .collect();
    let n_out = rng.random_range(2..=4);
    let responses = (0..n12)
        .map(|_| {
            if deterministic_responses {
                let mut r = vec![0.0; n_out];
                r[rng.random_range(0..n_out)] = 1.0;
                r
            } else {
                dirichlet_uniform(rng, n_out)
            }
        })
        .collect();
    JointModel::new(
        OnticSpace::numbered("a", n1).unwrap(),
        OnticSpace::numbered("b", n2).unwrap(),
        OnticSpace::numbered("w", n12).unwrap(),
        embedding,
        joint_preps,
        (0..n_out).map(|k| format!("r{k}")).collect(),
        responses,
    )
    .expect("generated model is valid")
}

/// Joint model in which each composite state is reached by exactly one of
/// the four preparations.
pub fn random_disjoint_model<R: Rng + ?Sized>(rng: &mut R) -> JointModel {
    let n12 = rng.random_range(4..=10);
    let mut owner: Vec<usize> = (0..n12)
        .map(|w| if w < 4 { w } else { rng.random_range(0..4) })
        .collect();
    owner.shuffle(rng);
    let joint_preps = (0..4)
        .map(|p| {
            let mine: Vec<usize> = (0..n12).filter(|&w| owner[w] == p).collect();
            let weights = dirichlet_uniform(rng, mine.len());
            let mut row = vec![0.0; n12];
            for (w, x) in mine.into_iter().zip(weights) {
                row[w] = x;
            }
            row
        })
        .collect();
    let det = rng.random_bool(0.5);
    random_composite(rng, n12, joint_preps, det)
}

/// PUC-satisfying model built from blocks of four composite states. In a
/// block the posterior over pairs is `q₁(a) q₂(b)`, `q₁(ā) q₂(b)`,
/// `q₁(a) q₂(b̄)`, `q₁(ā) q₂(b̄)` with equal block mass, so every
/// preparation receives the same total and the posteriors factorize.
pub fn random_puc_model<R: Rng + ?Sized>(rng: &mut R) -> JointModel {
    let blocks = rng.random_range(1..=3);
    let n12 = 4 * blocks;
    let block_mass = dirichlet_uniform(rng, blocks);
    let mut joint_preps = vec![vec![0.0; n12]; 4];
    let coin = |rng: &mut R| -> f64 {
        match rng.random_range(0..4) {
            0 => 0.0,
            1 => 1.0,
            _ => rng.random::<f64>(),
        }
    };
    for (b, &mass) in block_mass.iter().enumerate() {
        let q1 = coin(rng);
        let q2 = coin(rng);
        for (slot, (flip1, flip2)) in [(false, false), (true, false), (false, true), (true, true)]
            .into_iter()
            .enumerate()
        {
            let w = 4 * b + slot;
            let first = if flip1 {
                [1.0 - q1, q1]
            } else {
                [q1, 1.0 - q1]
            };
            let second = if flip2 {
                [1.0 - q2, q2]
            } else {
                [q2, 1.0 - q2]
            };
            for pair in PrepPair::ALL {
                // Each preparation has total weight Σ_blocks mass · 1 · 1 over
                // the block, times 4 · (1/4) from the prior, so this is its
                // normalized distribution.
                joint_preps[pair.index()][w] =
                    mass * first[pair.first().index()] * second[pair.second().index()];
            }
        }
    }
    // Remove the rounding drift from the row sums.
    for row in &mut joint_preps {
        let total: f64 = row.iter().sum();
        for x in row.iter_mut() {
            *x /= total;
        }
    }
    let det = rng.random_bool(0.5);
    random_composite(rng, n12, joint_preps, det)
}
