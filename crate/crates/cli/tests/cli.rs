use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn ckf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ckf")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_scenario(dir: &TempDir, name: &str, body: &str) -> PathBuf {
    let path = dir.path().join(name);
    fs::write(&path, body).unwrap();
    path
}

fn design_file(dir: &TempDir, scenario: &Path) -> PathBuf {
    let out = dir.path().join("design.json");
    let run = ckf(&["design", "--scenario", path_str(scenario), "--out", path_str(&out)]);
    assert_eq!(code(&run), 0, "{}", String::from_utf8_lossy(&run.stderr));
    out
}

#[test]
fn check_exit_codes_follow_the_verdict() {
    let scenario = fixture("two_modes.json");
    let ok = ckf(&["check", "--scenario", path_str(&scenario)]);
    assert_eq!(code(&ok), 0);
    let report = stdout_json(&ok);
    assert_eq!(report["payload"]["feasible"], Value::Bool(true));
    assert_eq!(report["payload"]["stability"]["min_power"].as_f64().unwrap(), 11.0);

    let dir = TempDir::new().unwrap();
    let low = write_scenario(
        &dir,
        "low.json",
        r#"{"source": {"A": {"diag": [2, 3]}, "Q": {"diag": [1, 1]}}, "channel": {"gains": [1, 1]}, "power": 10}"#,
    );
    let bad = ckf(&["check", "--scenario", path_str(&low)]);
    assert_eq!(code(&bad), 2);
    assert_eq!(stdout_json(&bad)["payload"]["feasible"], Value::Bool(false));
}

#[test]
fn malformed_and_missing_inputs_exit_one() {
    let dir = TempDir::new().unwrap();
    let broken = write_scenario(&dir, "broken.json", r#"{"source": {"#);
    assert_eq!(code(&ckf(&["check", "--scenario", path_str(&broken)])), 1);
    let unknown = write_scenario(
        &dir,
        "unknown.json",
        r#"{"source": {"A": [[2]], "Q": [[1]]}, "channel": {"gains": [1]}, "power": 5, "extra": 1}"#,
    );
    assert_eq!(code(&ckf(&["check", "--scenario", path_str(&unknown)])), 1);
    let indefinite = write_scenario(
        &dir,
        "indefinite.json",
        r#"{"source": {"A": [[2]], "Q": [[-1]]}, "channel": {"gains": [1]}, "power": 5}"#,
    );
    assert_eq!(code(&ckf(&["check", "--scenario", path_str(&indefinite)])), 1);
    let missing = dir.path().join("nope.json");
    assert_eq!(code(&ckf(&["check", "--scenario", path_str(&missing)])), 1);
}

#[test]
fn design_predicts_the_scalar_steady_state() {
    let dir = TempDir::new().unwrap();
    let out = design_file(&dir, &fixture("scalar.json"));
    let report = read_json(&out);
    let payload = &report["payload"];
    // P* = 1 / (1 - 4/6) = 3 at pi = 5.
    assert!((payload["predicted_mse"].as_f64().unwrap() - 3.0).abs() <= 1e-6);
    assert!((payload["predicted_power"].as_f64().unwrap() - 5.0).abs() <= 1e-6);
    assert_eq!(report["command"], "design");
}

#[test]
fn existing_outputs_need_force() {
    let dir = TempDir::new().unwrap();
    let scenario = fixture("scalar.json");
    let out = design_file(&dir, &scenario);
    fs::write(&out, "keep").unwrap();
    let again = ckf(&["design", "--scenario", path_str(&scenario), "--out", path_str(&out)]);
    assert_eq!(code(&again), 1);
    assert_eq!(fs::read_to_string(&out).unwrap(), "keep");
    let forced = ckf(&["design", "--scenario", path_str(&scenario), "--out", path_str(&out), "--force"]);
    assert_eq!(code(&forced), 0);
    assert_eq!(read_json(&out)["command"], "design");
}

#[test]
fn failed_design_leaves_no_output() {
    let dir = TempDir::new().unwrap();
    let low = write_scenario(
        &dir,
        "low.json",
        r#"{"source": {"A": [[2]], "Q": [[1]]}, "channel": {"gains": [1]}, "power": 2}"#,
    );
    let out = dir.path().join("design.json");
    let run = ckf(&["design", "--scenario", path_str(&low), "--out", path_str(&out)]);
    assert_eq!(code(&run), 2);
    assert!(!out.exists());
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
}

#[test]
fn simulate_is_deterministic_and_writes_the_trace() {
    let dir = TempDir::new().unwrap();
    let scenario = fixture("two_modes.json");
    let design = design_file(&dir, &scenario);
    let run = |tag: &str| {
        let out = dir.path().join(format!("sim_{tag}.json"));
        let trace = dir.path().join(format!("trace_{tag}.csv"));
        let r = ckf(&[
            "simulate",
            "--scenario",
            path_str(&scenario),
            "--design",
            path_str(&design),
            "--out",
            path_str(&out),
            "--trace",
            path_str(&trace),
            "--seed",
            "5",
            "--trials",
            "2",
            "--horizon",
            "200",
        ]);
        assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
        (read_json(&out), fs::read_to_string(&trace).unwrap())
    };
    let (first, trace_a) = run("a");
    let (second, trace_b) = run("b");
    assert_eq!(first["payload"], second["payload"]);
    assert_eq!(first["input_digest"], second["input_digest"]);
    assert_eq!(trace_a, trace_b);

    let golden = fs::read_to_string(fixture("trace_header_k2.csv")).unwrap();
    assert!(trace_a.starts_with(&golden));
    assert_eq!(trace_a.lines().count(), 1 + 2 * 200);
    for line in trace_a.lines().skip(1) {
        assert_eq!(line.split(',').count(), 8);
    }
}

#[test]
fn simulate_without_a_design_exits_one() {
    let dir = TempDir::new().unwrap();
    let missing = dir.path().join("missing.json");
    let run = ckf(&[
        "simulate",
        "--scenario",
        path_str(&fixture("scalar.json")),
        "--design",
        path_str(&missing),
    ]);
    assert_eq!(code(&run), 1);
}

#[test]
fn control_matches_the_separation_prediction() {
    let run = ckf(&["control", "--scenario", path_str(&fixture("scalar.json"))]);
    assert_eq!(code(&run), 0, "{}", String::from_utf8_lossy(&run.stderr));
    let payload = &stdout_json(&run)["payload"];
    assert!(payload["rel_dev"].as_f64().unwrap() <= 0.05);
    assert!((payload["predicted_lqr_cost"].as_f64().unwrap() - 3.3).abs() <= 1e-6);
}

#[test]
fn control_needs_a_control_block() {
    let run = ckf(&["control", "--scenario", path_str(&fixture("two_modes.json"))]);
    assert_eq!(code(&run), 1);
}

#[test]
fn control_with_zero_input_exits_two() {
    let dir = TempDir::new().unwrap();
    let zero = write_scenario(
        &dir,
        "zero.json",
        r#"{"source": {"A": [[2]], "Q": [[1]]}, "channel": {"gains": [1]}, "power": 5,
            "control": {"B": [[0]], "C_cost": [[1]], "E_cost": [[1]]}}"#,
    );
    assert_eq!(code(&ckf(&["control", "--scenario", path_str(&zero)])), 2);
}

#[test]
fn capacity_ratio_matches_closed_form() {
    let run = ckf(&["capacity", "--scenario", path_str(&fixture("capacity.json"))]);
    assert_eq!(code(&run), 0);
    let payload = &stdout_json(&run)["payload"];
    let p = 1e6f64;
    let expected = 0.5 * (1.0 + p).ln() / (1.0 + p / 2.0).ln();
    let ratio = payload["suboptimality"]["ratio"].as_f64().unwrap();
    assert!((ratio - expected).abs() <= 1e-12, "{ratio} vs {expected}");
    assert!((payload["shannon_capacity_nats"].as_f64().unwrap() - (1.0 + p / 2.0).ln()).abs() <= 1e-9);
}

#[test]
fn capacity_edge_cases() {
    let dir = TempDir::new().unwrap();
    let single = write_scenario(
        &dir,
        "single.json",
        r#"{"source": {"A": [[2]], "Q": [[1]]}, "channel": {"gains": [1.5]}, "power": 7}"#,
    );
    let run = ckf(&["capacity", "--scenario", path_str(&single)]);
    assert_eq!(code(&run), 0);
    assert!((stdout_json(&run)["payload"]["suboptimality"]["ratio"].as_f64().unwrap() - 1.0).abs() <= 1e-12);

    let zero = write_scenario(
        &dir,
        "zero.json",
        r#"{"source": {"A": [[2]], "Q": [[1]]}, "channel": {"gains": [1, 1]}, "power": 0}"#,
    );
    let run = ckf(&["capacity", "--scenario", path_str(&zero)]);
    assert_eq!(code(&run), 0);
    let payload = &stdout_json(&run)["payload"];
    assert_eq!(payload["shannon_capacity_nats"].as_f64().unwrap(), 0.0);
    assert_eq!(payload["matched"], Value::Bool(false));
}

#[test]
fn input_digest_is_the_sha256_of_the_scenario_bytes() {
    let run = ckf(&["capacity", "--scenario", path_str(&fixture("two_modes.json"))]);
    assert_eq!(
        stdout_json(&run)["input_digest"],
        "37166cafc2215e37075715f47521a970536488253c86a70b31375422a23e9b50"
    );
}

#[test]
fn conjecture_sweep_is_deterministic() {
    let args = ["conjecture", "--dims", "2x2", "--count", "2", "--seed", "7", "--restarts", "6"];
    let first = ckf(&args);
    let second = ckf(&args);
    assert_eq!(code(&first), 0);
    let (a, b) = (stdout_json(&first), stdout_json(&second));
    assert_eq!(a["payload"], b["payload"]);
    assert_eq!(a["payload"]["sweep"]["records"].as_array().unwrap().len(), 2);
}

#[test]
fn conjecture_with_no_instances_is_empty() {
    let run = ckf(&["conjecture", "--dims", "2x2", "--count", "0"]);
    assert_eq!(code(&run), 0);
    let payload = &stdout_json(&run)["payload"];
    assert!(payload["sweep"]["records"].as_array().unwrap().is_empty());
    assert!(payload["candidate_counterexamples"].as_array().unwrap().is_empty());
}

#[test]
fn conjecture_rejects_bad_dims() {
    assert_eq!(code(&ckf(&["conjecture", "--dims", "2by2"])), 1);
    assert_eq!(code(&ckf(&["conjecture", "--dims", "10x8", "--count", "1"])), 1);
}
