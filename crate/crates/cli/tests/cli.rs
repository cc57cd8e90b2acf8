//! End-to-end runs of the binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_markov-order"))
}

fn bundled(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn run(scenario: &Path, out: &Path, extra: &[&str]) -> Output {
    bin().arg("run").arg(scenario).arg("--out").arg(out).args(extra).output().unwrap()
}

fn report(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

#[test]
fn demo_run_exits_zero_with_exact_margins() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&bundled("demo_two_state.json"), dir.path(), &["--paths", "20000"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let r = report(dir.path());
    let comparisons = r["comparisons"].as_array().unwrap();
    assert_eq!(comparisons.len(), 4);
    for c in comparisons {
        assert_eq!(c["verdict"], "x_ge_y");
        assert!((c["expectation_x"].as_f64().unwrap() - 0.633_475).abs() < 1e-6);
        assert!((c["expectation_y"].as_f64().unwrap() - 0.432_332).abs() < 1e-6);
    }
}

#[test]
fn identical_processes_exit_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&bundled("identical.json"), dir.path(), &["--paths", "20000"]);
    assert_eq!(out.status.code(), Some(0));
    for c in report(dir.path())["comparisons"].as_array().unwrap() {
        assert_eq!(c["verdict"], "equal");
        assert_eq!(c["oracle_margin"].as_f64().unwrap(), 0.0);
    }
}

#[test]
fn inconclusive_scenario_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(&bundled("breakpoint.json"), dir.path(), &[]).status.code(), Some(1));
}

#[test]
fn malformed_rates_exit_three_with_a_pointer() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(bundled("demo_two_state.json")).unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, text.replacen("[[-2, 2], [1, -1]]", "[[-2, 2.5], [1, -1]]", 1)).unwrap();
    let out = run(&bad, &dir.path().join("out"), &[]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/specX/rates"));
    assert!(!dir.path().join("out").exists());
}

#[test]
fn missing_file_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(&dir.path().join("none.json"), dir.path(), &[]).status.code(), Some(3));
}

#[test]
fn reports_are_byte_stable() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        assert_eq!(run(&bundled("demo_two_state.json"), d, &["--paths", "5000", "--seed", "3"]).status.code(), Some(0));
    }
    for f in ["report.json", "linking_curve.csv", "residuals.csv", "generator_convergence.csv", "montecarlo.csv"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn schema_is_valid_json() {
    let out = bin().arg("schema").output().unwrap();
    assert!(out.status.success());
    let schema: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(schema["properties"]["specX"].is_object());
}

#[test]
fn quick_selftest_passes_and_injected_fault_fails() {
    let ok = bin().args(["selftest", "--quick"]).output().unwrap();
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stdout));
    let bad = bin().args(["selftest", "--quick", "--inject-fault"]).output().unwrap();
    assert_eq!(bad.status.code(), Some(2));
}
