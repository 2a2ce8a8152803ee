//! `onticity` command-line front end.
//!
//! Every subcommand reads one JSON input file and emits a report that records
//! the tool version, seed, tolerances and the SHA-256 digest of the input.
//! Exit codes are a stable contract, see [`exit`].

use std::ffi::OsString;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use onticity::antidist::{find_antidistinguishing_measurement, verify_certificate, SolverConfig};
use onticity::ontmodel::{
    check_screening, simulate_run, theorem1_audit, AgentFile, TheoryModel, DEFAULT_ZERO_TOL,
};
use onticity::pbrpuc::{pbr_audit, puc_audit, JointModel, PrepScenario};
use onticity::qcore::PureState;

pub mod exit {
    pub const PASS: i32 = 0;
    pub const PARSE: i32 = 1;
    pub const PRECONDITION: i32 = 2;
    pub const COUNTEREXAMPLE: i32 = 3;
    pub const INCONSISTENT: i32 = 4;
    pub const NOT_CERTIFIED: i32 = 5;
}

pub const TOOL: &str = "onticity";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Parser)]
#[command(
    name = "onticity",
    version,
    about = "Checks and audits for finite ontological models"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Screening check, then "R-distinguishable implies ontically distinct"
    /// for every pair of acts of a theory model.
    Theorem1(CommonArgs),
    /// Search for a measurement whose every outcome excludes one of the
    /// input states, and verify it independently.
    Antidist(AntidistArgs),
    /// PIP or PUC audit of a two-system joint model.
    Audit(AuditArgs),
    /// Seeded simulation of an agent conditionalizing on readouts; writes a
    /// CSV trace.
    Simulate(SimulateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Format {
    Json,
    CsvSummary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Pip,
    Puc,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Recorded in every report; 0 when not given.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = DEFAULT_ZERO_TOL)]
    pub zero_tol: f64,
    /// Report destination; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct AntidistArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Residual at or below which a measurement is certified.
    #[arg(long)]
    pub solver_tol: Option<f64>,
    #[arg(long)]
    pub restarts: Option<usize>,
}

#[derive(Debug, Args)]
pub struct AuditArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, value_enum, default_value_t = Mode::Pip)]
    pub mode: Mode,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, default_value_t = 1000)]
    pub trials: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    ParseError,
    PreconditionFailed,
    Counterexample,
    InternalInconsistency,
    NotCertified,
}

impl Status {
    pub fn exit_code(self) -> i32 {
        match self {
            Status::Pass => exit::PASS,
            Status::ParseError => exit::PARSE,
            Status::PreconditionFailed => exit::PRECONDITION,
            Status::Counterexample => exit::COUNTEREXAMPLE,
            Status::InternalInconsistency => exit::INCONSISTENT,
            Status::NotCertified => exit::NOT_CERTIFIED,
        }
    }
}

/// Reproducibility envelope around a command's result.
#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub input: String,
    pub input_sha256: Option<String>,
    pub seed: u64,
    pub zero_tol: f64,
    pub solver_tol: Option<f64>,
    pub status: Status,
    pub exit_code: i32,
    pub summary: String,
    pub result: Option<Value>,
}

#[derive(Debug)]
struct Outcome {
    status: Status,
    summary: String,
    result: Option<Value>,
}

impl Outcome {
    fn new(status: Status, summary: impl Into<String>, result: Option<Value>) -> Self {
        Self {
            status,
            summary: summary.into(),
            result,
        }
    }

    fn fail(status: Status, summary: impl Into<String>) -> Self {
        Self::new(status, summary, None)
    }
}

struct Input {
    bytes: Vec<u8>,
    digest: String,
}

fn read_input(path: &Path) -> Result<Input, Outcome> {
    let bytes = fs::read(path).map_err(|e| {
        Outcome::fail(
            Status::ParseError,
            format!("cannot read {}: {e}", path.display()),
        )
    })?;
    let digest = format!("{:x}", Sha256::digest(&bytes));
    Ok(Input { bytes, digest })
}

fn parse<T: for<'de> Deserialize<'de>>(input: &Input, what: &str) -> Result<T, Outcome> {
    serde_json::from_slice(&input.bytes)
        .map_err(|e| Outcome::fail(Status::ParseError, format!("not a valid {what}: {e}")))
}

fn to_value<T: Serialize>(x: &T) -> Value {
    serde_json::to_value(x).expect("report types serialize")
}

fn check_zero_tol(tol: f64) -> Result<(), Outcome> {
    if tol.is_finite() && tol >= 0.0 {
        Ok(())
    } else {
        Err(Outcome::fail(
            Status::PreconditionFailed,
            format!("zero tolerance {tol} must be finite and >= 0"),
        ))
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                exit::PARSE
            } else {
                exit::PASS
            };
        }
    };
    run_command(cli.command)
}

pub fn run_command(command: Command) -> i32 {
    match command {
        Command::Theorem1(a) => {
            let input = read_input(&a.input);
            let outcome = input
                .as_ref()
                .map_err(clone_outcome)
                .and_then(|i| cmd_theorem1(i, a.zero_tol));
            emit("theorem1", &a, input.ok().map(|i| i.digest), None, outcome)
        }
        Command::Antidist(a) => {
            let mut solver_tol = a.solver_tol;
            let (seed, digest, outcome) = match read_input(&a.common.input) {
                Ok(i) => {
                    let (seed, o) = cmd_antidist(&i, &a, &mut solver_tol);
                    (seed, Some(i.digest), o)
                }
                Err(o) => (a.common.seed.unwrap_or(0), None, Err(o)),
            };
            emit_with_seed("antidist", &a.common, digest, solver_tol, seed, outcome)
        }
        Command::Audit(a) => {
            let input = read_input(&a.common.input);
            let outcome = input
                .as_ref()
                .map_err(clone_outcome)
                .and_then(|i| cmd_audit(i, a.mode, a.common.zero_tol));
            emit(
                "audit",
                &a.common,
                input.ok().map(|i| i.digest),
                None,
                outcome,
            )
        }
        Command::Simulate(a) => {
            let input = read_input(&a.common.input);
            let outcome = input
                .as_ref()
                .map_err(clone_outcome)
                .and_then(|i| cmd_simulate(i, &a));
            emit(
                "simulate",
                &a.common,
                input.ok().map(|i| i.digest),
                None,
                outcome,
            )
        }
    }
}

fn clone_outcome(o: &Outcome) -> Outcome {
    Outcome::new(o.status, o.summary.clone(), o.result.clone())
}

fn emit(
    command: &'static str,
    common: &CommonArgs,
    digest: Option<String>,
    solver_tol: Option<f64>,
    outcome: Result<Outcome, Outcome>,
) -> i32 {
    let seed = common.seed.unwrap_or(0);
    emit_with_seed(command, common, digest, solver_tol, seed, outcome)
}

fn emit_with_seed(
    command: &'static str,
    common: &CommonArgs,
    digest: Option<String>,
    solver_tol: Option<f64>,
    seed: u64,
    outcome: Result<Outcome, Outcome>,
) -> i32 {
    let outcome = outcome.unwrap_or_else(|o| o);
    let report = Report {
        tool: TOOL,
        version: VERSION,
        command,
        input: common.input.display().to_string(),
        input_sha256: digest,
        seed,
        zero_tol: common.zero_tol,
        solver_tol,
        status: outcome.status,
        exit_code: outcome.status.exit_code(),
        summary: outcome.summary,
        result: outcome.result,
    };
    eprintln!("{}", report.summary);
    // `simulate` writes its trace to --out or stdout; the report then goes to
    // stdout or stderr respectively.
    let dest = match (command, common.out.as_deref()) {
        ("simulate", Some(_)) => Dest::Stdout,
        ("simulate", None) => Dest::Stderr,
        (_, Some(path)) => Dest::File(path),
        (_, None) => Dest::Stdout,
    };
    match write_report(&report, common.format, dest) {
        Ok(()) => report.exit_code,
        Err(e) => {
            eprintln!("cannot write report: {e}");
            exit::PRECONDITION
        }
    }
}

enum Dest<'a> {
    File(&'a Path),
    Stdout,
    Stderr,
}

pub fn render_report(report: &Report, format: Format) -> String {
    match format {
        Format::Json => {
            let mut s = serde_json::to_string_pretty(report).expect("report serializes");
            s.push('\n');
            s
        }
        Format::CsvSummary => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record([
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
            ])
            .expect("in-memory write");
            let status = serde_json::to_value(report.status).expect("status serializes");
            w.write_record([
                report.tool.to_string(),
                report.version.to_string(),
                report.command.to_string(),
                report.input.clone(),
                report.input_sha256.clone().unwrap_or_default(),
                report.seed.to_string(),
                report.zero_tol.to_string(),
                report.solver_tol.map(|t| t.to_string()).unwrap_or_default(),
                status.as_str().unwrap_or_default().to_string(),
                report.exit_code.to_string(),
                report.summary.clone(),
            ])
            .expect("in-memory write");
            String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
        }
    }
}

fn write_report(report: &Report, format: Format, dest: Dest) -> io::Result<()> {
    let text = render_report(report, format);
    match dest {
        Dest::File(path) => fs::write(path, text),
        Dest::Stdout => io::stdout().lock().write_all(text.as_bytes()),
        Dest::Stderr => io::stderr().lock().write_all(text.as_bytes()),
    }
}

// ---------------------------------------------------------------------------
// Commands

fn cmd_theorem1(input: &Input, zero_tol: f64) -> Result<Outcome, Outcome> {
    let model: TheoryModel = parse(input, "theory model")?;
    check_zero_tol(zero_tol)?;
    let screening = check_screening(model.responses());
    if !screening.passed {
        let w = screening.witness.expect("failed screening has a witness");
        let summary = format!(
            "screening fails: responses in state '{}' to outcome '{}' differ between acts '{}' and '{}' by {:e}",
            model.ontic().labels()[w.state],
            model.outcomes()[w.outcome],
            model.acts()[w.act_a],
            model.acts()[w.act_b],
            screening.max_deviation
        );
        return Ok(Outcome::new(
            Status::PreconditionFailed,
            summary,
            Some(json!({ "screening": screening })),
        ));
    }
    let audit = theorem1_audit(&model, zero_tol)
        .map_err(|e| Outcome::fail(Status::PreconditionFailed, e.to_string()))?;
    let (status, summary) = if audit.passed {
        (
            Status::Pass,
            format!("theorem1 holds for all {} act pairs", audit.pairs.len()),
        )
    } else {
        let (a, b) = &audit.counterexamples[0];
        (
            Status::Counterexample,
            format!(
                "{} counterexample pair(s); first: '{a}' and '{b}' are R-distinguishable but not ontically distinct",
                audit.counterexamples.len()
            ),
        )
    };
    Ok(Outcome::new(
        status,
        summary,
        Some(json!({ "screening": screening, "audit": audit })),
    ))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct StatesFile {
    states: Vec<PureState>,
    #[serde(default)]
    config: Option<SolverConfig>,
    #[serde(default)]
    n_outcomes: Option<usize>,
}

fn parse_states(input: &Input) -> Result<StatesFile, Outcome> {
    let value: Value = parse(input, "JSON document")?;
    let bad = |e: serde_json::Error| {
        Outcome::fail(Status::ParseError, format!("not a valid state list: {e}"))
    };
    if value.is_array() {
        Ok(StatesFile {
            states: serde_json::from_value(value).map_err(bad)?,
            config: None,
            n_outcomes: None,
        })
    } else {
        serde_json::from_value(value).map_err(bad)
    }
}

/// Returns the effective seed alongside the outcome so it reaches the report
/// even when the solver never runs.
fn cmd_antidist(
    input: &Input,
    args: &AntidistArgs,
    solver_tol: &mut Option<f64>,
) -> (u64, Result<Outcome, Outcome>) {
    let file = match parse_states(input) {
        Ok(f) => f,
        Err(o) => return (args.common.seed.unwrap_or(0), Err(o)),
    };
    let mut config = file.config.unwrap_or_default();
    if let Some(seed) = args.common.seed {
        config.seed = seed;
    }
    if let Some(tol) = args.solver_tol {
        config.tol = tol;
    }
    if let Some(r) = args.restarts {
        config.restarts = r;
    }
    *solver_tol = Some(config.tol);
    let seed = config.seed;
    let result = (|| {
        check_zero_tol(args.common.zero_tol)?;
        let solved = find_antidistinguishing_measurement(&file.states, file.n_outcomes, &config)
            .map_err(|e| Outcome::fail(Status::PreconditionFailed, e.to_string()))?;
        let verification = verify_certificate(&file.states, &solved.certificate, config.tol);
        let summary = format!(
            "residual={:e} certified={} restarts_used={}",
            solved.certificate.residual, solved.certified, solved.restarts_used
        );
        let status = match (solved.certified, verification.passed) {
            (true, true) => Status::Pass,
            (true, false) => Status::InternalInconsistency,
            (false, _) => Status::NotCertified,
        };
        Ok(Outcome::new(
            status,
            summary,
            Some(json!({ "config": config, "solve": solved, "verification": verification })),
        ))
    })();
    (seed, result)
}

fn cmd_audit(input: &Input, mode: Mode, zero_tol: f64) -> Result<Outcome, Outcome> {
    let jm: JointModel = parse(input, "joint model")?;
    check_zero_tol(zero_tol)?;
    let scenario = PrepScenario::uniform();
    let report = match mode {
        Mode::Pip => pbr_audit(&jm, &scenario, zero_tol),
        Mode::Puc => puc_audit(&jm, &scenario, zero_tol),
    };
    let hypothesis = match mode {
        Mode::Pip => "pip",
        Mode::Puc => "puc",
    };
    let mut summary = format!(
        "h1={} {hypothesis}={} conclusion={} consistent={}",
        report.h1, report.h2_or_puc, report.conclusion, report.consistent
    );
    if let Some(n) = &report.non_exclusion {
        summary.push_str(&format!(
            "; outcome '{}' is possible under all four preparations",
            n.outcome
        ));
    }
    if let Some(w) = &report.witness {
        summary.push_str(&format!(
            "; impossibility witness at state '{}', outcome '{}'",
            w.state, w.outcome
        ));
    }
    if report.unresolved {
        summary.push_str(
            "; unresolved: supports overlap but no state is shared by all four preparations",
        );
    }
    let status = if report.consistent {
        Status::Pass
    } else {
        Status::Counterexample
    };
    Ok(Outcome::new(status, summary, Some(to_value(&report))))
}

fn cmd_simulate(input: &Input, args: &SimulateArgs) -> Result<Outcome, Outcome> {
    let file: AgentFile = parse(input, "agent file")?;
    let precondition = |e: onticity::ontmodel::ModelError| {
        Outcome::fail(Status::PreconditionFailed, e.to_string())
    };
    let (agent, truth) = file.into_parts().map_err(precondition)?;
    let seed = args.common.seed.unwrap_or(0);
    let trace = simulate_run(&agent, &truth, seed, args.trials).map_err(precondition)?;

    let mut header = vec![
        "trial".to_string(),
        "act".into(),
        "ontic".into(),
        "outcome".into(),
        "null_conditioning".into(),
    ];
    for t in 0..agent.theories().len() {
        for act in agent.acts() {
            header.push(format!("posterior[t{t}|{act}]"));
        }
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    let io_err = |e: csv::Error| {
        Outcome::fail(
            Status::PreconditionFailed,
            format!("cannot write trace: {e}"),
        )
    };
    w.write_record(&header).map_err(io_err)?;
    let n_acts = agent.acts().len();
    let mut nulls = 0;
    let mut counts = vec![vec![0usize; agent.outcomes().len()]; n_acts];
    for rec in &trace {
        counts[rec.act][rec.outcome] += 1;
        let mut row = vec![
            rec.trial.to_string(),
            truth.acts()[rec.act].clone(),
            truth.ontic().labels()[rec.ontic].clone(),
            truth.outcomes()[rec.outcome].clone(),
            rec.posterior.is_none().to_string(),
        ];
        match &rec.posterior {
            Some(p) => row.extend(p.weights.iter().flatten().map(|x| x.to_string())),
            None => {
                nulls += 1;
                row.extend(std::iter::repeat_n(String::new(), header.len() - 5));
            }
        }
        w.write_record(&row).map_err(io_err)?;
    }
    let csv_bytes = w.into_inner().map_err(|e| io_err(e.into_error().into()))?;
    let written = match &args.common.out {
        Some(path) => fs::write(path, &csv_bytes),
        None => io::stdout().lock().write_all(&csv_bytes),
    };
    written.map_err(|e| {
        Outcome::fail(
            Status::PreconditionFailed,
            format!("cannot write trace: {e}"),
        )
    })?;

    let per_act: Vec<Value> = counts
        .iter()
        .enumerate()
        .map(|(a, c)| {
            let n: usize = c.iter().sum();
            json!({
                "act": truth.acts()[a],
                "trials": n,
                "outcome_frequency": c.iter().map(|&k| if n > 0 { k as f64 / n as f64 } else { 0.0 }).collect::<Vec<_>>(),
            })
        })
        .collect();
    let summary = format!(
        "simulated {} trials, {nulls} with conditioning on a null outcome",
        args.trials
    );
    Ok(Outcome::new(
        Status::Pass,
        summary,
        Some(json!({
            "trials": args.trials,
            "null_conditioning_rows": nulls,
            "trace": args.common.out.as_ref().map(|p| p.display().to_string()),
            "outcomes": truth.outcomes(),
            "per_act": per_act,
        })),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_are_stable() {
        let codes: Vec<i32> = [
            Status::Pass,
            Status::ParseError,
            Status::PreconditionFailed,
            Status::Counterexample,
            Status::InternalInconsistency,
            Status::NotCertified,
        ]
        .iter()
        .map(|s| s.exit_code())
        .collect();
        assert_eq!(codes, [0, 1, 2, 3, 4, 5]);
    }

    #[test]
    fn help_is_not_an_error() {
        assert_eq!(run(["onticity", "--help"]), 0);
        assert_eq!(
            run(["onticity", "audit", "--mode", "both", "--input", "x"]),
            1
        );
    }

    #[test]
    fn csv_summary_quotes_free_text() {
        let report = Report {
            tool: TOOL,
            version: VERSION,
            command: "audit",
            input: "m.json".into(),
            input_sha256: None,
            seed: 0,
            zero_tol: 1e-9,
            solver_tol: None,
            status: Status::Pass,
            exit_code: 0,
            summary: "h1=true, pip=true".into(),
            result: None,
        };
        let text = render_report(&report, Format::CsvSummary);
        let mut lines = text.lines();
        assert!(lines.next().unwrap().starts_with("tool,version,command"));
        assert!(lines
            .next()
            .unwrap()
            .ends_with(",pass,0,\"h1=true, pip=true\""));
    }

    #[test]
    fn negative_zero_tol_is_a_precondition_failure() {
        let input = Input {
            bytes: b"{}".to_vec(),
            digest: String::new(),
        };
        let err = check_zero_tol(-1.0).unwrap_err();
        assert_eq!(err.status, Status::PreconditionFailed);
        // Parse failures take precedence.
        let err = cmd_audit(&input, Mode::Pip, -1.0).unwrap_err();
        assert_eq!(err.status, Status::ParseError);
    }
}
