//! Independent oracles shared by the integration and acceptance suites.
//! They use plain loops over the raw tables and avoid library helpers other
//! than accessors.

#![allow(dead_code)]

use onticity::ontmodel::{AgentState, TheoryModel};
use onticity::pbrpuc::{JointModel, PrepPair};

/// `Σ_ω prep(act)(ω) · resp(k | act, ω)` by direct summation.
pub fn credence_oracle(m: &TheoryModel, act: usize) -> Vec<f64> {
    let prep = m.preparations().row(act);
    (0..m.n_outcomes())
        .map(|k| {
            let mut s = 0.0;
            for (w, p) in prep.iter().enumerate() {
                s += p * m.responses().get(act, w, k);
            }
            s
        })
        .collect()
}

pub fn r_distinguishable_oracle(m: &TheoryModel, i: usize, j: usize, tol: f64) -> bool {
    let ci = credence_oracle(m, i);
    let cj = credence_oracle(m, j);
    ci.iter().zip(&cj).all(|(a, b)| *a <= tol || *b <= tol)
}

/// Searches every subset Δ of Ω for `prep_i(Δ) = 1` and `prep_j(Δ) = 0`,
/// with equalities up to `tol` per state.
pub fn separating_event_exists(m: &TheoryModel, i: usize, j: usize, tol: f64) -> bool {
    let n = m.ontic().len();
    assert!(n <= 20, "subset search is exponential");
    let pi = m.preparations().row(i);
    let pj = m.preparations().row(j);
    let slack = tol * n as f64;
    (0u32..1 << n).any(|mask| {
        let mut in_i = 0.0;
        let mut in_j = 0.0;
        for w in 0..n {
            if mask >> w & 1 == 1 {
                in_i += pi[w];
                in_j += pj[w];
            }
        }
        in_i >= 1.0 - slack && in_j <= slack
    })
}

/// Posterior over `(theory, act)` from the flattened joint over
/// `(theory, act, ω, outcome)`. `None` when the outcome has zero marginal.
pub fn bayes_oracle(agent: &AgentState, outcome: usize) -> Option<Vec<Vec<f64>>> {
    let mut joint = Vec::new();
    let mut total = 0.0;
    for t in agent.theories() {
        let mut row = Vec::new();
        for (a, prior) in agent.act_prior().iter().enumerate() {
            let mut mass = 0.0;
            for (w, p) in t.model.preparations().row(a).iter().enumerate() {
                mass += t.weight * prior * p * t.model.responses().get(a, w, outcome);
            }
            total += mass;
            row.push(mass);
        }
        joint.push(row);
    }
    if total <= 0.0 {
        return None;
    }
    Some(
        joint
            .into_iter()
            .map(|r| r.into_iter().map(|x| x / total).collect())
            .collect(),
    )
}

/// Credence of each outcome under each joint preparation, by direct loops.
pub fn joint_credence_oracle(jm: &JointModel) -> [Vec<f64>; 4] {
    PrepPair::ALL.map(|pair| {
        let prep = jm.joint_prep(pair);
        (0..jm.outcomes().len())
            .map(|k| prep.iter().zip(jm.responses()).map(|(p, r)| p * r[k]).sum())
            .collect()
    })
}

/// Every model with |Ω| = 2, two acts, two outcomes and all weights on the
/// grid {0, ¼, ½, ¾, 1}, responses shared by the acts.
pub fn quarter_grid_models() -> Vec<TheoryModel> {
    let grid = [0.0, 0.25, 0.5, 0.75, 1.0];
    let mut out = Vec::new();
    for &p0 in &grid {
        for &p1 in &grid {
            for &r0 in &grid {
                for &r1 in &grid {
                    out.push(
                        TheoryModel::screened(
                            vec![vec![p0, 1.0 - p0], vec![p1, 1.0 - p1]],
                            vec![vec![r0, 1.0 - r0], vec![r1, 1.0 - r1]],
                        )
                        .unwrap(),
                    );
                }
            }
        }
    }
    out
}

/// Pairs that the oracles find R-distinguishable but without a separating
/// event.
pub fn theorem1_violations(m: &TheoryModel, tol: f64) -> usize {
    let mut bad = 0;
    for i in 0..m.n_acts() {
        for j in i + 1..m.n_acts() {
            if r_distinguishable_oracle(m, i, j, tol) && !separating_event_exists(m, i, j, tol) {
                bad += 1;
            }
        }
    }
    bad
}

/// `φ = |0⟩` and a real `ψ` with `⟨φ|ψ⟩ = o`.
pub fn overlap_pair(o: f64) -> (onticity::qcore::PureState, onticity::qcore::PureState) {
    use onticity::qcore::PureState;
    (
        PureState::basis(2, 0).unwrap(),
        PureState::from_real(&[o, (1.0 - o * o).sqrt()]).unwrap(),
    )
}
