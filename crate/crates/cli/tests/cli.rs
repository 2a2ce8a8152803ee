use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use onticity::antidist::{verify_certificate, ExclusionCertificate};
use onticity::pbrpuc::{JointModel, PrepPair};
use onticity::qcore::PureState;
use serde_json::Value;
use sha2::{Digest, Sha256};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

fn onticity(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_onticity"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn run_json(args: &[&str]) -> (i32, Value) {
    let out = onticity(args);
    let report = serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!(
            "stdout is not JSON ({e}): {}\nstderr: {}",
            String::from_utf8_lossy(&out.stdout),
            String::from_utf8_lossy(&out.stderr)
        )
    });
    (out.status.code().unwrap(), report)
}

fn input(name: &str) -> String {
    fixture(name).display().to_string()
}

#[test]
fn theorem1_exit_codes() {
    let (code, r) = run_json(&["theorem1", "--input", &input("deterministic.json")]);
    assert_eq!(code, 0);
    assert_eq!(r["status"], "pass");
    assert_eq!(r["result"]["audit"]["passed"], true);

    let (code, r) = run_json(&["theorem1", "--input", &input("screening_violation.json")]);
    assert_eq!(code, 2);
    assert_eq!(r["result"]["screening"]["passed"], false);

    let (code, r) = run_json(&["theorem1", "--input", &input("malformed.json")]);
    assert_eq!(code, 1);
    assert!(
        r["summary"].as_str().unwrap().contains("line 3"),
        "{}",
        r["summary"]
    );
}

#[test]
fn unknown_flag_and_missing_file_are_parse_errors() {
    assert_eq!(onticity(&["theorem1", "--bogus"]).status.code(), Some(1));
    let (code, r) = run_json(&["theorem1", "--input", "/nonexistent/model.json"]);
    assert_eq!(code, 1);
    assert!(r["input_sha256"].is_null());
}

#[test]
fn report_embeds_reproducibility_fields() {
    let path = input("deterministic.json");
    let (_, r) = run_json(&["theorem1", "--input", &path, "--zero-tol", "1e-7"]);
    let want = format!("{:x}", Sha256::digest(std::fs::read(&path).unwrap()));
    assert_eq!(r["input_sha256"], want.as_str());
    assert_eq!(r["version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(r["tool"], "onticity");
    assert_eq!(r["seed"], 0);
    assert_eq!(r["zero_tol"], 1e-7);
    let keys: Vec<&String> = r.as_object().unwrap().keys().collect();
    assert_eq!(
        keys,
        [
            "tool",
            "version",
            "command",
            "input",
            "input_sha256",
            "seed",
            "zero_tol",
            "solver_tol",
            "status",
            "exit_code",
            "summary",
            "result"
        ]
    );
}

#[test]
fn csv_summary_and_out_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("report.csv");
    let o = onticity(&[
        "theorem1",
        "--input",
        &input("deterministic.json"),
        "--format",
        "csv-summary",
        "--seed",
        "17",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    assert!(o.stdout.is_empty());
    let mut rdr = csv::Reader::from_path(&out).unwrap();
    let headers = rdr.headers().unwrap().clone();
    let row = rdr.records().next().unwrap().unwrap();
    let get = |k: &str| {
        row.get(headers.iter().position(|h| h == k).unwrap())
            .unwrap()
            .to_string()
    };
    assert_eq!(get("status"), "pass");
    assert_eq!(get("seed"), "17");
    assert_eq!(get("exit_code"), "0");
    assert_eq!(get("input_sha256").len(), 64);
}

fn states_of(name: &str) -> Vec<PureState> {
    let v: Value = serde_json::from_slice(&std::fs::read(fixture(name)).unwrap()).unwrap();
    let list = if v.is_array() { v } else { v["states"].clone() };
    serde_json::from_value(list).unwrap()
}

#[test]
fn antidist_pbr_set_is_certified_and_independently_verified() {
    let out = onticity(&[
        "antidist",
        "--input",
        &input("pbr_zero_plus.json"),
        "--seed",
        "5",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("certified=true"), "{stderr}");
    assert!(stderr.contains("restarts_used="), "{stderr}");
    let r: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(r["seed"], 5);
    assert_eq!(r["solver_tol"], 1e-6);
    let residual = r["result"]["solve"]["certificate"]["residual"]
        .as_f64()
        .unwrap();
    assert!(residual <= 1e-6);

    let cert: ExclusionCertificate =
        serde_json::from_value(r["result"]["solve"]["certificate"].clone()).unwrap();
    let v = verify_certificate(&states_of("pbr_zero_plus.json"), &cert, 1e-6);
    assert!(v.passed, "{:?}", v.failures);
}

#[test]
fn antidist_single_state_is_not_certified() {
    let (code, r) = run_json(&[
        "antidist",
        "--input",
        &input("single_state.json"),
        "--restarts",
        "8",
    ]);
    assert_eq!(code, 5);
    assert_eq!(r["status"], "not_certified");
    let residual = r["result"]["solve"]["certificate"]["residual"]
        .as_f64()
        .unwrap();
    assert!((residual - 1.0).abs() < 1e-9);
}

#[test]
fn antidist_orthogonal_pair_uses_file_config() {
    let (code, r) = run_json(&["antidist", "--input", &input("orthogonal_pair.json")]);
    assert_eq!(code, 0);
    assert_eq!(r["seed"], 3);
    assert!(
        r["result"]["solve"]["certificate"]["residual"]
            .as_f64()
            .unwrap()
            <= 1e-12
    );
}

#[test]
fn antidist_rejects_mismatched_dimensions() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("states.json");
    std::fs::write(&path, "[[[1,0],[0,0]], [[1,0],[0,0],[0,0]]]").unwrap();
    let (code, _) = run_json(&["antidist", "--input", path.to_str().unwrap()]);
    assert_eq!(code, 2);
}

#[test]
fn audit_product_fixture_passes_pip() {
    let (code, r) = run_json(&["audit", "--input", &input("product.json"), "--mode", "pip"]);
    assert_eq!(code, 0);
    assert_eq!(r["result"]["h1"], true);
    assert_eq!(r["result"]["h2_or_puc"], true);
    assert_eq!(r["result"]["conclusion"], true);
}

#[test]
fn audit_puc_not_pip_fixture() {
    let (code, r) = run_json(&[
        "audit",
        "--input",
        &input("g3_puc_not_pip.json"),
        "--mode",
        "puc",
    ]);
    assert_eq!(code, 0);
    let res = &r["result"];
    assert_eq!(res["h2_or_puc"], true);
    assert_eq!(res["puc"]["passed"], true);
    assert!(res["puc"]["max_gap"].as_f64().unwrap() <= 1e-9);
    assert_eq!(res["pip"]["passed"], false);
    assert!(res["pip"]["nca"]
        .as_array()
        .unwrap()
        .iter()
        .any(|n| n["passed"] == false));
}

#[test]
fn audit_overlap_fixture_names_a_non_excluding_outcome() {
    let (code, r) = run_json(&[
        "audit",
        "--input",
        &input("g2_overlap.json"),
        "--mode",
        "pip",
    ]);
    assert_eq!(code, 0);
    let res = &r["result"];
    assert_eq!(res["h1"], false);
    let outcome = res["non_exclusion"]["outcome"].as_str().unwrap();

    // Oracle: recompute the four credences of that outcome from the file.
    let jm: JointModel =
        serde_json::from_slice(&std::fs::read(fixture("g2_overlap.json")).unwrap()).unwrap();
    let k = jm.outcomes().iter().position(|o| o == outcome).unwrap();
    for pair in PrepPair::ALL {
        let c: f64 = jm
            .joint_prep(pair)
            .iter()
            .zip(jm.responses())
            .map(|(p, r)| p * r[k])
            .sum();
        assert!(c > 1e-9);
        let reported = res["non_exclusion"]["credences"][pair.index()]
            .as_f64()
            .unwrap();
        assert!((c - reported).abs() < 1e-15);
    }
}

#[test]
fn audit_two_system_gap_is_flagged_not_failed() {
    let (code, r) = run_json(&[
        "audit",
        "--input",
        &input("g4_puc_gap.json"),
        "--mode",
        "puc",
    ]);
    assert_eq!(code, 0);
    assert_eq!(r["result"]["unresolved"], true);
    assert!(r["result"].get("witness").is_none());
}

fn simulate_csv(agent: &str, trials: &str, seed: &str) -> (String, Value) {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("trace.csv");
    let o = onticity(&[
        "simulate",
        "--input",
        &input(agent),
        "--trials",
        trials,
        "--seed",
        seed,
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    (
        std::fs::read_to_string(out).unwrap(),
        serde_json::from_slice(&o.stdout).unwrap(),
    )
}

#[test]
fn simulate_deterministic_agent_saturates() {
    let (csv_text, report) = simulate_csv("deterministic_agent.json", "10", "1");
    assert_eq!(report["seed"], 1);
    let mut rdr = csv::Reader::from_reader(csv_text.as_bytes());
    let headers = rdr.headers().unwrap().clone();
    let mut rows = 0;
    for rec in rdr.records() {
        let rec = rec.unwrap();
        rows += 1;
        let act = rec.get(1).unwrap();
        let col = headers
            .iter()
            .position(|h| h == format!("posterior[t0|{act}]"))
            .unwrap();
        assert_eq!(rec.get(col).unwrap(), "1");
        assert_eq!(rec.get(4).unwrap(), "false");
    }
    assert_eq!(rows, 10);
}

#[test]
fn simulate_is_byte_identical_per_seed() {
    let (a, _) = simulate_csv("noisy_agent.json", "200", "9");
    let (b, _) = simulate_csv("noisy_agent.json", "200", "9");
    let (c, _) = simulate_csv("noisy_agent.json", "200", "10");
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn simulate_flags_null_conditioning_and_continues() {
    let (csv_text, report) = simulate_csv("null_agent.json", "200", "2");
    let mut rdr = csv::Reader::from_reader(csv_text.as_bytes());
    let flagged = rdr
        .records()
        .filter(|r| r.as_ref().unwrap().get(4) == Some("true"))
        .count();
    assert!(flagged > 0);
    assert_eq!(report["result"]["null_conditioning_rows"], flagged);
    assert_eq!(report["result"]["trials"], 200);
}

#[test]
fn simulate_frequencies_match_truth() {
    // First theory is the ground truth: a0 → w0 (½ r0, ½ r1), a1 → w1 (½ r1, ½ r2).
    let (_, report) = simulate_csv("noisy_agent.json", "100000", "4");
    let per_act = report["result"]["per_act"].as_array().unwrap();
    let want = [[0.5, 0.5, 0.0], [0.0, 0.5, 0.5]];
    for (a, entry) in per_act.iter().enumerate() {
        for (k, f) in entry["outcome_frequency"]
            .as_array()
            .unwrap()
            .iter()
            .enumerate()
        {
            assert!((f.as_f64().unwrap() - want[a][k]).abs() < 0.01);
        }
    }
}
