//! Acceptance suite: one line per criterion, non-zero exit if any fails.

mod common;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::*;
use onticity::antidist::*;
use onticity::ontmodel::*;
use onticity::pbrpuc::*;
use onticity::qcore::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Verdict {
    passed: bool,
    detail: String,
}

fn verdict(passed: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        passed,
        detail: detail.into(),
    }
}

fn within(elapsed: Duration, limit_s: f64) -> bool {
    elapsed.as_secs_f64() < limit_s
}

/// `|⟨b|s⟩|²` from raw amplitudes.
fn born_oracle(basis: &PureState, state: &PureState) -> f64 {
    basis
        .amplitudes()
        .iter()
        .zip(state.amplitudes())
        .map(|(b, s)| b.conj() * s)
        .sum::<num_complex::Complex64>()
        .norm_sqr()
}

fn born_rule_reproduction() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    for i in 0..100 {
        let dim = 2 + i % 3;
        let state = random_state(&mut rng, dim);
        let basis = random_basis(&mut rng, dim);
        let povm = Povm::projective(&basis).unwrap();
        let model = psi_ontic_model(std::slice::from_ref(&state), &povm).unwrap();
        let predicted = predicted_credence(&model, 0).unwrap();
        for (b, p) in basis.iter().zip(&predicted) {
            worst = worst.max((born_oracle(b, &state) - p).abs());
        }
    }
    let t = start.elapsed();
    verdict(
        worst <= 1e-12 && within(t, 5.0),
        format!(
            "100 pairs, max deviation {worst:.2e}, {:.2}s",
            t.as_secs_f64()
        ),
    )
}

fn theorem1_suite() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut violations = 0;
    let mut distinguishable_pairs = 0;
    for _ in 0..1000 {
        let n_states = rng.random_range(1..=8);
        let n_acts = rng.random_range(1..=4);
        let n_outcomes = rng.random_range(1..=4);
        let m = if rng.random_bool(0.5) {
            random_sparse_screened_model(&mut rng, n_states, n_acts, n_outcomes)
        } else {
            random_screened_model(&mut rng, n_states, n_acts, n_outcomes)
        };
        let report = theorem1_audit(&m, DEFAULT_ZERO_TOL).unwrap();
        violations += theorem1_violations(&m, DEFAULT_ZERO_TOL) + report.counterexamples.len();
        distinguishable_pairs += report.pairs.iter().filter(|p| p.r_distinguishable).count();
    }
    let grid = quarter_grid_models();
    for m in &grid {
        let report = theorem1_audit(m, DEFAULT_ZERO_TOL).unwrap();
        violations += theorem1_violations(m, DEFAULT_ZERO_TOL) + report.counterexamples.len();
    }
    let t = start.elapsed();
    verdict(
        violations == 0 && within(t, 30.0),
        format!(
            "1000 random + {} grid models, {violations} violations, {distinguishable_pairs} R-distinguishable random pairs, {:.2}s",
            grid.len(),
            t.as_secs_f64()
        ),
    )
}

fn pbr_antidistinguishability() -> Verdict {
    let start = Instant::now();
    let set = pbr_product_set(&PureState::basis(2, 0).unwrap(), &PureState::plus()).unwrap();
    let cfg = SolverConfig::default();
    let out = find_antidistinguishing_measurement(&set.states, None, &cfg).unwrap();
    let verified = verify_certificate(&set.states, &out.certificate, cfg.tol).passed;
    let t = start.elapsed();
    let main_ok = out.certified && verified && out.certificate.residual <= 1e-6 && within(t, 60.0);

    let mut sweep_ok = true;
    let mut sweep = Vec::new();
    for o in [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7] {
        let (phi, psi) = overlap_pair(o);
        let set = pbr_product_set(&phi, &psi).unwrap();
        let r = find_antidistinguishing_measurement(&set.states, None, &cfg).unwrap();
        sweep_ok &= r.certified && verify_certificate(&set.states, &r.certificate, cfg.tol).passed;
        sweep.push(format!("{o}:{:.1e}", r.certificate.residual));
    }
    for o in [0.8, 0.9, 0.95] {
        let (phi, psi) = overlap_pair(o);
        let set = pbr_product_set(&phi, &psi).unwrap();
        let r = find_antidistinguishing_measurement(&set.states, None, &cfg).unwrap();
        println!(
            "      overlap {o}: best residual {:.3e} after {} restarts (logged only)",
            r.certificate.residual, r.restarts_used
        );
    }
    verdict(
        main_ok && sweep_ok,
        format!(
            "|0>,|+>: residual {:.2e}, verified {verified}, {} restarts, {:.2}s; sweep {}",
            out.certificate.residual,
            out.restarts_used,
            t.as_secs_f64(),
            sweep.join(" ")
        ),
    )
}

fn pip_implies_puc() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let s = PrepScenario::uniform();
    let mut failures = 0;
    let mut worst: f64 = 0.0;
    for i in 0..500 {
        let jm = random_product_model(&mut rng, i % 2 == 0);
        let r = puc_check(&jm, &s, 1e-9);
        worst = worst.max(r.max_gap);
        failures += !r.passed as usize;
    }
    verdict(
        failures == 0,
        format!("500 product models, {failures} failures, max gap {worst:.2e}"),
    )
}

fn distinctness_implies_puc() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let s = PrepScenario::uniform();
    let nonzero = (0..200)
        .filter(|_| {
            let r = puc_check(&random_disjoint_model(&mut rng), &s, 1e-9);
            !(r.passed && r.max_gap == 0.0)
        })
        .count();
    verdict(
        nonzero == 0,
        format!("200 four-way disjoint models, {nonzero} with nonzero gap"),
    )
}

fn audit_emptiness() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let s = PrepScenario::uniform();
    let mut witnesses = 0;
    let mut h1_cases = 0;
    for i in 0..500 {
        let jm = random_product_model(&mut rng, i % 2 == 0);
        let r = pbr_audit(&jm, &s, DEFAULT_ZERO_TOL);
        witnesses += r.witness.is_some() as usize;
        h1_cases += r.h1 as usize;
    }
    let mut unresolved = 0;
    for _ in 0..500 {
        let jm = random_puc_model(&mut rng);
        let r = puc_audit(&jm, &s, DEFAULT_ZERO_TOL);
        witnesses += r.witness.is_some() as usize;
        unresolved += r.unresolved as usize;
        h1_cases += r.h1 as usize;
    }

    let g2 = gallery_models().overlap;
    let r = pbr_audit(&g2, &s, DEFAULT_ZERO_TOL);
    let oracle = joint_credence_oracle(&g2);
    let g2_ok = !r.h1
        && r.non_exclusion.as_ref().is_some_and(|n| {
            let k = g2.outcomes().iter().position(|o| *o == n.outcome).unwrap();
            oracle.iter().all(|c| c[k] > DEFAULT_ZERO_TOL)
        });
    let outcome = r.non_exclusion.map(|n| n.outcome).unwrap_or_default();
    verdict(
        witnesses == 0 && g2_ok,
        format!(
            "1000 models ({h1_cases} antidistinguishable, {unresolved} unresolved), {witnesses} witnesses; overlap fixture not antidistinguishable via outcome {outcome}"
        ),
    )
}

fn puc_without_pip() -> Verdict {
    let g3 = gallery_models().puc_not_pip;
    let s = PrepScenario::uniform();
    let puc = puc_check(&g3, &s, 1e-9);
    let failing: Vec<&str> = PrepPair::ALL
        .iter()
        .filter(|&&p| !nca_check(&g3, p, 1e-9).passed)
        .map(|p| p.key())
        .collect();
    verdict(
        puc.passed && puc.max_gap <= 1e-9 && !failing.is_empty(),
        format!(
            "gap {:.1e}, NCA fails for {}",
            puc.max_gap,
            failing.join(",")
        ),
    )
}

/// Copy of `m` with state `s` split in two (same responses) and the states
/// reversed: a different ontology with the same predicted credences.
fn refinement(m: &TheoryModel, s: usize, frac: f64) -> TheoryModel {
    let n = m.ontic().len();
    let prep = (0..m.n_acts())
        .map(|a| {
            let row = m.preparations().row(a);
            let mut r: Vec<f64> = row.to_vec();
            r[s] = row[s] * frac;
            r.push(row[s] - r[s]);
            r.reverse();
            r
        })
        .collect();
    let mut resp: Vec<Vec<f64>> = (0..n).map(|w| m.responses().row(0, w).to_vec()).collect();
    resp.push(resp[s].clone());
    resp.reverse();
    TheoryModel::screened(prep, resp).unwrap()
}

fn conditionalization_oracle() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let mut worst: f64 = 0.0;
    let mut mismatched_nulls = 0;
    for _ in 0..100 {
        let n_acts = rng.random_range(1..=3);
        let n_outcomes = rng.random_range(1..=4);
        let n_theories = rng.random_range(1..=4);
        let theories = dirichlet_uniform(&mut rng, n_theories)
            .into_iter()
            .map(|weight| {
                let n_states = rng.random_range(1..=6);
                WeightedTheory {
                    weight,
                    model: random_sparse_screened_model(&mut rng, n_states, n_acts, n_outcomes),
                }
            })
            .collect();
        let prior = dirichlet_uniform(&mut rng, n_acts);
        let agent = AgentState::with_act_prior(theories, prior).unwrap();
        for k in 0..n_outcomes {
            match (conditionalize(&agent, k), bayes_oracle(&agent, k)) {
                (Ok(p), Some(o)) => {
                    for (row, orow) in p.weights.iter().zip(&o) {
                        for (x, y) in row.iter().zip(orow) {
                            worst = worst.max((x - y).abs());
                        }
                    }
                }
                (Err(ModelError::ConditioningOnNull { .. }), None) => {}
                _ => mismatched_nulls += 1,
            }
        }
    }

    // Theories that differ ontologically but agree on every credence, so
    // the ground-truth frequencies are the mixture's.
    let mut freq_err: f64 = 0.0;
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(880 + seed);
        let truth = random_screened_model(&mut rng, 4, 2, 3);
        let split = rng.random_range(0..4);
        let frac = rng.random::<f64>();
        let w = dirichlet_uniform(&mut rng, 2);
        let agent = AgentState::new(vec![
            WeightedTheory {
                weight: w[0],
                model: truth.clone(),
            },
            WeightedTheory {
                weight: w[1],
                model: refinement(&truth, split, frac),
            },
        ])
        .unwrap();
        let trace = simulate_run(&agent, &truth, seed, 100_000).unwrap();
        for act in 0..2 {
            let mix = mixture_credence(&agent, act).unwrap();
            let rows: Vec<_> = trace.iter().filter(|r| r.act == act).collect();
            for (k, m) in mix.iter().enumerate() {
                let f = rows.iter().filter(|r| r.outcome == k).count() as f64 / rows.len() as f64;
                freq_err = freq_err.max((f - m).abs());
            }
        }
    }
    verdict(
        worst <= 1e-12 && mismatched_nulls == 0 && freq_err <= 0.01,
        format!(
            "100 agents, max posterior deviation {worst:.2e}; 5 x 1e5 trials, max frequency error {freq_err:.4}"
        ),
    )
}

type Criterion = (&'static str, fn() -> Verdict);

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        ("born-rule reproduction", born_rule_reproduction),
        ("distinguishability implies distinctness", theorem1_suite),
        ("PBR antidistinguishability", pbr_antidistinguishability),
        ("PIP implies PUC", pip_implies_puc),
        ("ontic distinctness implies PUC", distinctness_implies_puc),
        ("PBR/PUC audit emptiness", audit_emptiness),
        ("PUC without PIP", puc_without_pip),
        ("conditionalization oracle", conditionalization_oracle),
    ];
    let mut all = true;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let v = run();
        all &= v.passed;
        println!(
            "[{}] {}. {name}: {}",
            if v.passed { "PASS" } else { "FAIL" },
            i + 1,
            v.detail
        );
    }
    if all {
        println!("acceptance: all 8 criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: FAILED");
        ExitCode::FAILURE
    }
}
