//! Finite ontological models of a single system.
//!
//! A [`TheoryModel`] fixes a finite ontic space (with the power-set event
//! algebra), a distribution over ontic states for each preparation act, and
//! per-state response credences for a single readout. From these the
//! act-outcome credences follow by expectation over the ontic state, and an
//! agent's overall credences follow by averaging over the theories she takes
//! seriously.
//!
//! Exact zeros are thresholded at a configurable `zero_tol`
//! ([`DEFAULT_ZERO_TOL`] unless stated otherwise).

use indexmap::IndexMap;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_ZERO_TOL: f64 = 1e-9;
/// Tolerance on row sums of stored probability vectors.
pub const STOCHASTIC_TOL: f64 = 1e-12;
/// Maximal act-dependence of responses still counted as screened off.
pub const SCREENING_TOL: f64 = 1e-9;
pub const DEFAULT_ONTIC_CAP: usize = 64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error(
        "screening precondition violated: act {} vs act {} differ by {deviation:e} \
         at outcome {} in state {}",
        witness.act_a, witness.act_b, witness.outcome, witness.state
    )]
    ScreeningViolated {
        witness: ScreeningWitness,
        deviation: f64,
    },
    #[error("conditioning on outcome {outcome} which has zero marginal credence")]
    ConditioningOnNull { outcome: usize },
}

pub type Result<T> = std::result::Result<T, ModelError>;

fn check_distribution(what: &str, row: &[f64]) -> Result<()> {
    if let Some(bad) = row
        .iter()
        .find(|p| !p.is_finite() || **p < 0.0 || **p > 1.0)
    {
        return Err(ModelError::InvalidModel(format!(
            "{what}: entry {bad} outside [0, 1]"
        )));
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > STOCHASTIC_TOL {
        return Err(ModelError::InvalidModel(format!("{what}: sums to {sum}")));
    }
    Ok(())
}

fn check_unique(what: &str, ids: &[String]) -> Result<()> {
    for (i, id) in ids.iter().enumerate() {
        if ids[..i].contains(id) {
            return Err(ModelError::InvalidModel(format!("duplicate {what} '{id}'")));
        }
    }
    Ok(())
}

/// Indices of entries strictly above `zero_tol`.
pub fn support(weights: &[f64], zero_tol: f64) -> Vec<usize> {
    weights
        .iter()
        .enumerate()
        .filter(|(_, w)| **w > zero_tol)
        .map(|(i, _)| i)
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct OnticSpace {
    labels: Vec<String>,
}

impl OnticSpace {
    pub fn new(labels: Vec<String>) -> Result<Self> {
        Self::with_cap(labels, DEFAULT_ONTIC_CAP)
    }

    pub fn with_cap(labels: Vec<String>, cap: usize) -> Result<Self> {
        if labels.is_empty() || labels.len() > cap {
            return Err(ModelError::InvalidModel(format!(
                "ontic space must have between 1 and {cap} states, got {}",
                labels.len()
            )));
        }
        check_unique("ontic state", &labels)?;
        Ok(Self { labels })
    }

    /// States labelled `prefix0`, `prefix1`, ...
    pub fn numbered(prefix: &str, n: usize) -> Result<Self> {
        Self::new((0..n).map(|i| format!("{prefix}{i}")).collect())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }
}

/// Per-act probability vectors over the ontic space.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparationMap {
    rows: Vec<Vec<f64>>,
}

impl PreparationMap {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let width = rows.first().map_or(0, Vec::len);
        for (a, row) in rows.iter().enumerate() {
            if row.len() != width {
                return Err(ModelError::InvalidModel(format!(
                    "preparation for act {a} has {} weights, expected {width}",
                    row.len()
                )));
            }
            check_distribution(&format!("preparation for act {a}"), row)?;
        }
        Ok(Self { rows })
    }

    pub fn row(&self, act: usize) -> &[f64] {
        &self.rows[act]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }
}

/// Response credences `cr(r_k | φ_i, T, ω)`, indexed `[act][state][outcome]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseTable {
    entries: Vec<Vec<Vec<f64>>>,
}

impl ResponseTable {
    pub fn new(entries: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        let n_states = entries.first().map_or(0, Vec::len);
        let n_outcomes = entries.first().and_then(|a| a.first()).map_or(0, Vec::len);
        for (a, per_act) in entries.iter().enumerate() {
            if per_act.len() != n_states {
                return Err(ModelError::InvalidModel(format!(
                    "responses for act {a} cover {} states, expected {n_states}",
                    per_act.len()
                )));
            }
            for (w, row) in per_act.iter().enumerate() {
                if row.len() != n_outcomes {
                    return Err(ModelError::InvalidModel(format!(
                        "responses for act {a} in state {w} have {} outcomes, expected {n_outcomes}",
                        row.len()
                    )));
                }
                check_distribution(&format!("responses for act {a} in state {w}"), row)?;
            }
        }
        Ok(Self { entries })
    }

    /// The same per-state responses for every act, which satisfies screening
    /// by construction.
    pub fn act_independent(n_acts: usize, per_state: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(vec![per_state; n_acts])
    }

    pub fn n_acts(&self) -> usize {
        self.entries.len()
    }

    pub fn n_states(&self) -> usize {
        self.entries.first().map_or(0, Vec::len)
    }

    pub fn n_outcomes(&self) -> usize {
        self.entries
            .first()
            .and_then(|a| a.first())
            .map_or(0, Vec::len)
    }

    pub fn get(&self, act: usize, state: usize, outcome: usize) -> f64 {
        self.entries[act][state][outcome]
    }

    pub fn row(&self, act: usize, state: usize) -> &[f64] {
        &self.entries[act][state]
    }

    pub fn entries(&self) -> &[Vec<Vec<f64>>] {
        &self.entries
    }
}

/// A finite theory: ontic space, preparations and responses for one readout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelFile", into = "ModelFile")]
pub struct TheoryModel {
    ontic: OnticSpace,
    acts: Vec<String>,
    outcomes: Vec<String>,
    preparations: PreparationMap,
    responses: ResponseTable,
}

impl TheoryModel {
    pub fn new(
        ontic: OnticSpace,
        acts: Vec<String>,
        outcomes: Vec<String>,
        preparations: PreparationMap,
        responses: ResponseTable,
    ) -> Result<Self> {
        if acts.is_empty() || outcomes.is_empty() {
            return Err(ModelError::InvalidModel(
                "a model needs at least one act and one outcome".into(),
            ));
        }
        check_unique("act", &acts)?;
        check_unique("outcome", &outcomes)?;
        if preparations.rows().len() != acts.len() || responses.n_acts() != acts.len() {
            return Err(ModelError::InvalidModel(format!(
                "{} acts declared but {} preparations and {} response tables given",
                acts.len(),
                preparations.rows().len(),
                responses.n_acts()
            )));
        }
        if preparations.rows()[0].len() != ontic.len() || responses.n_states() != ontic.len() {
            return Err(ModelError::InvalidModel(format!(
                "ontic space has {} states but tables cover a different number",
                ontic.len()
            )));
        }
        if responses.n_outcomes() != outcomes.len() {
            return Err(ModelError::InvalidModel(format!(
                "{} outcomes declared but responses have {}",
                outcomes.len(),
                responses.n_outcomes()
            )));
        }
        Ok(Self {
            ontic,
            acts,
            outcomes,
            preparations,
            responses,
        })
    }

    /// Builds a model with act-independent responses and generated ids
    /// (`a0..`, `r0..`, `w0..`).
    pub fn screened(prep: Vec<Vec<f64>>, per_state_responses: Vec<Vec<f64>>) -> Result<Self> {
        let n_acts = prep.len();
        let n_states = per_state_responses.len();
        let n_outcomes = per_state_responses.first().map_or(0, Vec::len);
        Self::new(
            OnticSpace::numbered("w", n_states)?,
            (0..n_acts).map(|i| format!("a{i}")).collect(),
            (0..n_outcomes).map(|i| format!("r{i}")).collect(),
            PreparationMap::new(prep)?,
            ResponseTable::act_independent(n_acts, per_state_responses)?,
        )
    }

    pub fn ontic(&self) -> &OnticSpace {
        &self.ontic
    }

    pub fn acts(&self) -> &[String] {
        &self.acts
    }

    pub fn outcomes(&self) -> &[String] {
        &self.outcomes
    }

    pub fn preparations(&self) -> &PreparationMap {
        &self.preparations
    }

    pub fn responses(&self) -> &ResponseTable {
        &self.responses
    }

    pub fn n_acts(&self) -> usize {
        self.acts.len()
    }

    pub fn n_outcomes(&self) -> usize {
        self.outcomes.len()
    }

    pub fn act_index(&self, id: &str) -> Result<usize> {
        self.acts
            .iter()
            .position(|a| a == id)
            .ok_or_else(|| ModelError::InvalidArgument(format!("unknown act '{id}'")))
    }

    fn check_act(&self, act: usize) -> Result<()> {
        if act >= self.acts.len() {
            return Err(ModelError::InvalidArgument(format!(
                "act index {act} out of range ({} acts)",
                self.acts.len()
            )));
        }
        Ok(())
    }
}

/// On-disk JSON layout of a [`TheoryModel`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub ontic: Vec<String>,
    pub acts: Vec<String>,
    pub outcomes: Vec<String>,
    pub prep: IndexMap<String, Vec<f64>>,
    pub response: IndexMap<String, IndexMap<String, Vec<f64>>>,
}

impl TryFrom<ModelFile> for TheoryModel {
    type Error = ModelError;

    fn try_from(file: ModelFile) -> Result<Self> {
        let ontic = OnticSpace::new(file.ontic)?;
        let mut prep = Vec::with_capacity(file.acts.len());
        let mut responses = Vec::with_capacity(file.acts.len());
        for act in &file.acts {
            let row = file.prep.get(act).ok_or_else(|| {
                ModelError::InvalidModel(format!("no preparation for act '{act}'"))
            })?;
            prep.push(row.clone());
            let per_state = file
                .response
                .get(act)
                .ok_or_else(|| ModelError::InvalidModel(format!("no responses for act '{act}'")))?;
            let mut rows = Vec::with_capacity(ontic.len());
            for label in ontic.labels() {
                let row = per_state.get(label).ok_or_else(|| {
                    ModelError::InvalidModel(format!(
                        "no responses for act '{act}' in state '{label}'"
                    ))
                })?;
                rows.push(row.clone());
            }
            if per_state.len() != ontic.len() {
                return Err(ModelError::InvalidModel(format!(
                    "responses for act '{act}' name states outside the ontic space"
                )));
            }
            responses.push(rows);
        }
        if file.prep.len() != file.acts.len() || file.response.len() != file.acts.len() {
            return Err(ModelError::InvalidModel(
                "preparations or responses name undeclared acts".into(),
            ));
        }
        TheoryModel::new(
            ontic,
            file.acts,
            file.outcomes,
            PreparationMap::new(prep)?,
            ResponseTable::new(responses)?,
        )
    }
}

impl From<TheoryModel> for ModelFile {
    fn from(m: TheoryModel) -> Self {
        let prep = m
            .acts
            .iter()
            .zip(m.preparations.rows())
            .map(|(a, row)| (a.clone(), row.clone()))
            .collect();
        let response = m
            .acts
            .iter()
            .zip(m.responses.entries())
            .map(|(a, per_state)| {
                let rows = m
                    .ontic
                    .labels()
                    .iter()
                    .zip(per_state)
                    .map(|(l, r)| (l.clone(), r.clone()))
                    .collect();
                (a.clone(), rows)
            })
            .collect();
        ModelFile {
            ontic: m.ontic.labels,
            acts: m.acts,
            outcomes: m.outcomes,
            prep,
            response,
        }
    }
}

/// `cr(r_k | φ_i)` as an acts × outcomes row-stochastic matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CredenceTable {
    pub acts: Vec<String>,
    pub outcomes: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl CredenceTable {
    /// Checks entries in `[0, 1]` and rows summing to 1 within `row_tol`.
    pub fn new(
        acts: Vec<String>,
        outcomes: Vec<String>,
        rows: Vec<Vec<f64>>,
        row_tol: f64,
    ) -> Result<Self> {
        if rows.len() != acts.len() {
            return Err(ModelError::InvalidArgument(format!(
                "{} acts but {} rows",
                acts.len(),
                rows.len()
            )));
        }
        for (a, row) in rows.iter().enumerate() {
            if row.len() != outcomes.len() {
                return Err(ModelError::InvalidArgument(format!(
                    "row {a} has {} entries, expected {}",
                    row.len(),
                    outcomes.len()
                )));
            }
            if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(ModelError::InvalidArgument(format!(
                    "row {a} leaves [0, 1]"
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > row_tol {
                return Err(ModelError::InvalidArgument(format!(
                    "row {a} sums to {sum}"
                )));
            }
        }
        Ok(Self {
            acts,
            outcomes,
            rows,
        })
    }

    /// Table with generated act/outcome ids and the stored-vector tolerance.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n_out = rows.first().map_or(0, Vec::len);
        Self::new(
            (0..rows.len()).map(|i| format!("a{i}")).collect(),
            (0..n_out).map(|k| format!("r{k}")).collect(),
            rows,
            STOCHASTIC_TOL,
        )
    }

    pub fn n_acts(&self) -> usize {
        self.rows.len()
    }

    pub fn n_outcomes(&self) -> usize {
        self.outcomes.len()
    }
}

/// Expectation of the response credences over the act's ontic distribution.
pub fn predicted_credence(model: &TheoryModel, act: usize) -> Result<Vec<f64>> {
    model.check_act(act)?;
    let prep = model.preparations.row(act);
    let mut out = vec![0.0; model.n_outcomes()];
    for (state, &weight) in prep.iter().enumerate() {
        if weight == 0.0 {
            continue;
        }
        for (acc, r) in out.iter_mut().zip(model.responses.row(act, state)) {
            *acc += weight * r;
        }
    }
    Ok(out)
}

/// Predicted credences for every act of the model.
pub fn credence_table(model: &TheoryModel) -> CredenceTable {
    let rows = (0..model.n_acts())
        .map(|a| predicted_credence(model, a).expect("act index in range"))
        .collect();
    CredenceTable {
        acts: model.acts.clone(),
        outcomes: model.outcomes.clone(),
        rows,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScreeningWitness {
    pub act_a: usize,
    pub act_b: usize,
    pub outcome: usize,
    pub state: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreeningReport {
    pub passed: bool,
    pub max_deviation: f64,
    /// Location of the maximal deviation, when it is nonzero.
    pub witness: Option<ScreeningWitness>,
}

/// Checks that responses do not depend on the act once the ontic state is
/// given: every pair of acts agrees within [`SCREENING_TOL`].
pub fn check_screening(responses: &ResponseTable) -> ScreeningReport {
    let mut max_deviation = 0.0;
    let mut witness = None;
    for a in 0..responses.n_acts() {
        for b in a + 1..responses.n_acts() {
            for state in 0..responses.n_states() {
                for outcome in 0..responses.n_outcomes() {
                    let d =
                        (responses.get(a, state, outcome) - responses.get(b, state, outcome)).abs();
                    if d > max_deviation {
                        max_deviation = d;
                        witness = Some(ScreeningWitness {
                            act_a: a,
                            act_b: b,
                            outcome,
                            state,
                        });
                    }
                }
            }
        }
    }
    ScreeningReport {
        passed: max_deviation <= SCREENING_TOL,
        max_deviation,
        witness,
    }
}

fn check_table_act(cred: &CredenceTable, act: usize) -> Result<()> {
    if act >= cred.n_acts() {
        return Err(ModelError::InvalidArgument(format!(
            "act index {act} out of range ({} acts)",
            cred.n_acts()
        )));
    }
    Ok(())
}

/// Every outcome has (thresholded) zero credence under at least one of the
/// two acts.
pub fn r_distinguishable(
    cred: &CredenceTable,
    act_i: usize,
    act_j: usize,
    zero_tol: f64,
) -> Result<bool> {
    check_table_act(cred, act_i)?;
    check_table_act(cred, act_j)?;
    Ok(cred.rows[act_i]
        .iter()
        .zip(&cred.rows[act_j])
        .all(|(p, q)| p.min(*q) <= zero_tol))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OnticDistinctness {
    pub distinct: bool,
    /// An event with credence 1 under the first act and 0 under the second:
    /// the support of the first act's preparation.
    pub witness: Option<Vec<usize>>,
}

/// On a finite space with the power-set algebra, a separating event exists
/// iff the supports are disjoint, and the first support is such an event.
pub fn ontically_distinct(
    model: &TheoryModel,
    act_i: usize,
    act_j: usize,
    zero_tol: f64,
) -> Result<OnticDistinctness> {
    model.check_act(act_i)?;
    model.check_act(act_j)?;
    let si = support(model.preparations.row(act_i), zero_tol);
    let sj = support(model.preparations.row(act_j), zero_tol);
    let distinct = si.iter().all(|w| !sj.contains(w));
    Ok(OnticDistinctness {
        distinct,
        witness: distinct.then_some(si),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairAudit {
    pub act_a: String,
    pub act_b: String,
    pub r_distinguishable: bool,
    pub ontically_distinct: bool,
    pub delta: Option<Vec<String>>,
    pub consistent: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theorem1Report {
    pub passed: bool,
    pub zero_tol: f64,
    pub pairs: Vec<PairAudit>,
    pub counterexamples: Vec<(String, String)>,
}

/// Checks "R-distinguishable ⇒ ontically distinct" for every pair of acts of
/// a model whose responses are screened off from the act.
pub fn theorem1_audit(model: &TheoryModel, zero_tol: f64) -> Result<Theorem1Report> {
    let screening = check_screening(&model.responses);
    if !screening.passed {
        return Err(ModelError::ScreeningViolated {
            witness: screening.witness.expect("failed screening has a witness"),
            deviation: screening.max_deviation,
        });
    }
    let cred = credence_table(model);
    let mut pairs = Vec::new();
    let mut counterexamples = Vec::new();
    for a in 0..model.n_acts() {
        for b in a + 1..model.n_acts() {
            let dist = r_distinguishable(&cred, a, b, zero_tol)?;
            let ontic = ontically_distinct(model, a, b, zero_tol)?;
            let consistent = !dist || ontic.distinct;
            if !consistent {
                counterexamples.push((model.acts[a].clone(), model.acts[b].clone()));
            }
            pairs.push(PairAudit {
                act_a: model.acts[a].clone(),
                act_b: model.acts[b].clone(),
                r_distinguishable: dist,
                ontically_distinct: ontic.distinct,
                delta: ontic
                    .witness
                    .map(|ws| ws.iter().map(|&w| model.ontic.labels[w].clone()).collect()),
                consistent,
            });
        }
    }
    Ok(Theorem1Report {
        passed: counterexamples.is_empty(),
        zero_tol,
        pairs,
        counterexamples,
    })
}

// ---------------------------------------------------------------------------
// Agent

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedTheory {
    pub weight: f64,
    pub model: TheoryModel,
}

/// Credences over theories plus the die over acts.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentState {
    theories: Vec<WeightedTheory>,
    act_prior: Vec<f64>,
}

impl AgentState {
    /// Agent with a uniform die over the acts.
    pub fn new(theories: Vec<WeightedTheory>) -> Result<Self> {
        let n = theories.first().map_or(0, |t| t.model.n_acts());
        Self::with_act_prior(theories, vec![1.0 / n.max(1) as f64; n])
    }

    pub fn with_act_prior(theories: Vec<WeightedTheory>, act_prior: Vec<f64>) -> Result<Self> {
        let first = theories
            .first()
            .ok_or_else(|| ModelError::InvalidArgument("agent has no theories".into()))?;
        for t in &theories[1..] {
            if t.model.acts != first.model.acts || t.model.outcomes != first.model.outcomes {
                return Err(ModelError::InvalidArgument(
                    "theories disagree on act or outcome ids".into(),
                ));
            }
        }
        let weights: Vec<f64> = theories.iter().map(|t| t.weight).collect();
        check_distribution("theory weights", &weights).map_err(|e| match e {
            ModelError::InvalidModel(m) => ModelError::InvalidArgument(m),
            other => other,
        })?;
        if act_prior.len() != first.model.n_acts() {
            return Err(ModelError::InvalidArgument(format!(
                "act prior has {} entries for {} acts",
                act_prior.len(),
                first.model.n_acts()
            )));
        }
        check_distribution("act prior", &act_prior).map_err(|e| match e {
            ModelError::InvalidModel(m) => ModelError::InvalidArgument(m),
            other => other,
        })?;
        Ok(Self {
            theories,
            act_prior,
        })
    }

    pub fn theories(&self) -> &[WeightedTheory] {
        &self.theories
    }

    pub fn act_prior(&self) -> &[f64] {
        &self.act_prior
    }

    pub fn acts(&self) -> &[String] {
        &self.theories[0].model.acts
    }

    pub fn outcomes(&self) -> &[String] {
        &self.theories[0].model.outcomes
    }
}

/// Theory-weighted average of the per-theory predicted credences.
pub fn mixture_credence(agent: &AgentState, act: usize) -> Result<Vec<f64>> {
    let mut out = vec![0.0; agent.outcomes().len()];
    for t in &agent.theories {
        let p = predicted_credence(&t.model, act)?;
        for (acc, x) in out.iter_mut().zip(p) {
            *acc += t.weight * x;
        }
    }
    Ok(out)
}

/// Posterior credence over (theory, act) pairs, indexed `[theory][act]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Posterior {
    pub weights: Vec<Vec<f64>>,
}

impl Posterior {
    pub fn act_marginal(&self) -> Vec<f64> {
        let n = self.weights.first().map_or(0, Vec::len);
        (0..n)
            .map(|a| self.weights.iter().map(|row| row[a]).sum())
            .collect()
    }

    pub fn theory_marginal(&self) -> Vec<f64> {
        self.weights.iter().map(|row| row.iter().sum()).collect()
    }
}

/// Bayes' rule on the joint (theory, act) credence after seeing `outcome`.
pub fn conditionalize(agent: &AgentState, outcome: usize) -> Result<Posterior> {
    if outcome >= agent.outcomes().len() {
        return Err(ModelError::InvalidArgument(format!(
            "outcome index {outcome} out of range"
        )));
    }
    let mut weights = Vec::with_capacity(agent.theories.len());
    let mut marginal = 0.0;
    for t in &agent.theories {
        let mut row = Vec::with_capacity(agent.act_prior.len());
        for (act, &prior) in agent.act_prior.iter().enumerate() {
            let like = predicted_credence(&t.model, act)?[outcome];
            let w = t.weight * prior * like;
            marginal += w;
            row.push(w);
        }
        weights.push(row);
    }
    if marginal <= 0.0 {
        return Err(ModelError::ConditioningOnNull { outcome });
    }
    for row in &mut weights {
        for w in row.iter_mut() {
            *w /= marginal;
        }
    }
    Ok(Posterior { weights })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub act: usize,
    pub ontic: usize,
    pub outcome: usize,
    /// `None` when the agent gave the observed outcome zero credence.
    pub posterior: Option<Posterior>,
}

fn weighted_index(weights: &[f64]) -> Result<WeightedIndex<f64>> {
    WeightedIndex::new(weights)
        .map_err(|e| ModelError::InvalidArgument(format!("cannot sample from {weights:?}: {e}")))
}

/// Runs `n_trials` rounds of die → act → ontic state → readout against the
/// `truth` model, recording the agent's posterior after each readout.
pub fn simulate_run(
    agent: &AgentState,
    truth: &TheoryModel,
    seed: u64,
    n_trials: usize,
) -> Result<Vec<TrialRecord>> {
    if n_trials == 0 {
        return Err(ModelError::InvalidArgument(
            "n_trials must be at least 1".into(),
        ));
    }
    if truth.acts != agent.acts() || truth.outcomes != agent.outcomes() {
        return Err(ModelError::InvalidArgument(
            "ground-truth model disagrees with the agent on act or outcome ids".into(),
        ));
    }
    let die = weighted_index(&agent.act_prior)?;
    let preps = truth
        .preparations
        .rows()
        .iter()
        .map(|row| weighted_index(row))
        .collect::<Result<Vec<_>>>()?;
    let mut responses = Vec::with_capacity(truth.n_acts());
    for act in 0..truth.n_acts() {
        let per_state = (0..truth.ontic.len())
            .map(|w| weighted_index(truth.responses.row(act, w)))
            .collect::<Result<Vec<_>>>()?;
        responses.push(per_state);
    }
    // Posteriors depend only on the outcome.
    let posteriors: Vec<Option<Posterior>> = (0..truth.n_outcomes())
        .map(|k| conditionalize(agent, k).ok())
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trace = Vec::with_capacity(n_trials);
    for trial in 0..n_trials {
        let act = die.sample(&mut rng);
        let ontic = preps[act].sample(&mut rng);
        let outcome = responses[act][ontic].sample(&mut rng);
        trace.push(TrialRecord {
            trial,
            act,
            ontic,
            outcome,
            posterior: posteriors[outcome].clone(),
        });
    }
    Ok(trace)
}

/// JSON layout of an agent: weighted theories, an optional act prior
/// (uniform when absent) and an optional ground-truth model (the first
/// theory when absent).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentFile {
    pub theories: Vec<WeightedTheory>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub act_prior: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<TheoryModel>,
}

impl AgentFile {
    pub fn into_parts(self) -> Result<(AgentState, TheoryModel)> {
        let truth = match self.ground_truth {
            Some(t) => t,
            None => self
                .theories
                .first()
                .ok_or_else(|| ModelError::InvalidArgument("agent has no theories".into()))?
                .model
                .clone(),
        };
        let agent = match self.act_prior {
            Some(prior) => AgentState::with_act_prior(self.theories, prior)?,
            None => AgentState::new(self.theories)?,
        };
        Ok((agent, truth))
    }
}

// ---------------------------------------------------------------------------
// Random models

/// A draw from the flat Dirichlet distribution on the `n`-simplex.
pub fn dirichlet_uniform<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    loop {
        let g: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(Exp1)).collect();
        let total: f64 = g.iter().sum();
        if total > 0.0 {
            let mut p: Vec<f64> = g.iter().map(|x| x / total).collect();
            // Push the rounding error into the largest entry so stored rows
            // sum to 1 well inside STOCHASTIC_TOL.
            let err = 1.0 - p.iter().sum::<f64>();
            let big = (0..n).max_by(|&a, &b| p[a].total_cmp(&p[b])).unwrap_or(0);
            p[big] += err;
            return p;
        }
    }
}

/// Model with Dirichlet preparation and response rows, responses shared by
/// all acts so screening holds by construction.
pub fn random_screened_model<R: Rng + ?Sized>(
    rng: &mut R,
    n_states: usize,
    n_acts: usize,
    n_outcomes: usize,
) -> TheoryModel {
    let prep = (0..n_acts)
        .map(|_| dirichlet_uniform(rng, n_states))
        .collect();
    let resp = (0..n_states)
        .map(|_| dirichlet_uniform(rng, n_outcomes))
        .collect();
    TheoryModel::screened(prep, resp).expect("generated rows are stochastic")
}

/// Like [`random_screened_model`], but each row is restricted to a random
/// nonempty subset of its coordinates, so zeros (and hence distinguishable
/// and distinct pairs) actually occur.
pub fn random_sparse_screened_model<R: Rng + ?Sized>(
    rng: &mut R,
    n_states: usize,
    n_acts: usize,
    n_outcomes: usize,
) -> TheoryModel {
    fn sparse_row<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
        let keep: Vec<bool> = loop {
            let k: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
            if k.iter().any(|&b| b) {
                break k;
            }
        };
        let m = keep.iter().filter(|&&b| b).count();
        let mut dense = dirichlet_uniform(rng, m).into_iter();
        keep.iter()
            .map(|&b| if b { dense.next().unwrap() } else { 0.0 })
            .collect()
    }
    let prep = (0..n_acts).map(|_| sparse_row(rng, n_states)).collect();
    let resp = (0..n_states).map(|_| sparse_row(rng, n_outcomes)).collect();
    TheoryModel::screened(prep, resp).expect("generated rows are stochastic")
}
