//! End-to-end tests of the command-line surface: flags, exit codes, output
//! schemas, and reproducibility.

use std::path::Path;
use std::process::{Command, Output};

fn popsim() -> Command {
    Command::new(env!("CARGO_BIN_EXE_popsim"))
}

fn write(dir: &Path, name: &str, content: &str) -> std::path::PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, content).unwrap();
    path
}

fn stdout(output: &Output) -> String {
    String::from_utf8(output.stdout.clone()).unwrap()
}

fn stderr(output: &Output) -> String {
    String::from_utf8(output.stderr.clone()).unwrap()
}

const AM_CRN: &str = "A + B -> 2U\nA + U -> 2A @ 3\nB + U <-> 2B @ 4, 5\n";
const AM_PP: &str = "A B -> U U\nA U -> A A\nB U -> B B\n";
const APPENDIX_CRN: &str = "2A <-> B + C @ 3, 2\nC -> D\n";

#[test]
fn run_crn_produces_161_conserving_rows() {
    let dir = tempfile::tempdir().unwrap();
    let crn = write(dir.path(), "am.crn", AM_CRN);
    let out = popsim()
        .args(["run", "--crn"])
        .arg(&crn)
        .args(["--n", "100", "--init", "A=51,B=49", "--time", "16", "--interval", "0.1", "--seed", "1"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "time,A,B,U");
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 161);
    for row in rows {
        let cells: Vec<&str> = row.split(',').collect();
        assert_eq!(cells.len(), 4);
        let total: u64 = cells[1..].iter().map(|c| c.parse::<u64>().unwrap()).sum();
        assert_eq!(total, 100, "row {row}");
    }
}

#[test]
fn run_is_byte_identical_for_fixed_seed() {
    let dir = tempfile::tempdir().unwrap();
    let pp = write(dir.path(), "am.pp", AM_PP);
    let run_once = || {
        let out = popsim()
            .args(["run", "--protocol"])
            .arg(&pp)
            .args(["--init", "A=51,B=49", "--time", "8", "--interval", "0.25", "--seed", "42", "--format", "json"])
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", stderr(&out));
        out.stdout
    };
    assert_eq!(run_once(), run_once());
}

#[test]
fn missing_init_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let crn = write(dir.path(), "am.crn", AM_CRN);
    let out = popsim()
        .args(["run", "--crn"])
        .arg(&crn)
        .args(["--n", "100", "--time", "1"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn discrete_time_with_crn_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let crn = write(dir.path(), "am.crn", AM_CRN);
    let out = popsim()
        .args(["run", "--crn"])
        .arg(&crn)
        .args(["--n", "10", "--init", "A=5,B=5", "--time", "1", "--time-model", "discrete"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("discrete time unsupported for CRN inputs"));
}

#[test]
fn malformed_crn_reports_span_and_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let crn = write(dir.path(), "bad.crn", "A + B -> 2U\nA -> B + C\n");
    let out = popsim()
        .args(["run", "--crn"])
        .arg(&crn)
        .args(["--n", "4", "--init", "A=2,B=2", "--time", "1"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("line 2"), "stderr: {}", stderr(&out));
}

#[test]
fn compile_reproduces_appendix_probabilities() {
    let dir = tempfile::tempdir().unwrap();
    let crn = write(dir.path(), "appendix.crn", APPENDIX_CRN);
    let out_file = dir.path().join("appendix.pp");
    let out = popsim()
        .args(["compile", "--crn"])
        .arg(&crn)
        .args(["--n", "10", "--volume", "10", "--out"])
        .arg(&out_file)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    let text = std::fs::read_to_string(&out_file).unwrap();
    assert!(text.contains("# m = 1.9"));
    assert!(text.contains("# n = 10"));
    assert!(text.contains("# v = 10"));

    let proto = popsim::dsl::parse_protocol(&text).unwrap();
    assert_eq!(proto.m(), 1.9);
    let id = |s: &str| proto.names().get(s).unwrap();
    let rel = |x: f64, y: f64| (x - y).abs() <= 1e-12 * y;
    let daa = proto.delta(id("A"), id("A"));
    assert!(rel(daa.entries()[0].1, 1.35 / 1.9));
    let dcb = proto.delta(id("C"), id("B"));
    assert!(rel(dcb.entries()[0].1, 0.9 / 1.9));
    assert!(rel(dcb.entries()[1].1, 1.0 / 1.9));

    // The compiled file runs directly as a protocol input.
    let run_out = popsim()
        .args(["run", "--protocol"])
        .arg(&out_file)
        .args(["--init", "A=10", "--time", "1", "--interval", "0.5", "--seed", "3"])
        .output()
        .unwrap();
    assert!(run_out.status.success(), "{}", stderr(&run_out));
    assert!(stdout(&run_out).starts_with("time,A,B,C,D"));
}

#[test]
fn compile_rejects_empty_network_and_tiny_population() {
    let dir = tempfile::tempdir().unwrap();
    let empty = write(dir.path(), "empty.crn", "# nothing here\n");
    let out = popsim()
        .args(["compile", "--crn"])
        .arg(&empty)
        .args(["--n", "10"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));

    let crn = write(dir.path(), "a.crn", APPENDIX_CRN);
    let out = popsim()
        .args(["compile", "--crn"])
        .arg(&crn)
        .args(["--n", "1"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn sample_single_trial_and_zero_trials() {
    let dir = tempfile::tempdir().unwrap();
    let pp = write(dir.path(), "leader.pp", "L L => L F\n");
    let out = popsim()
        .args(["sample", "--protocol"])
        .arg(&pp)
        .args(["--init", "L=2,F=8", "--at", "5", "--trials", "1", "--state", "F", "--seed", "9"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "value,count");
    assert_eq!(lines.len(), 2);
    assert!(lines[1].ends_with(",1"));

    let out = popsim()
        .args(["sample", "--protocol"])
        .arg(&pp)
        .args(["--init", "L=2,F=8", "--at", "5", "--trials", "0", "--state", "F"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn sample_csv_requires_state_and_histogram_sums_to_trials() {
    let dir = tempfile::tempdir().unwrap();
    let pp = write(dir.path(), "am.pp", AM_PP);
    let out = popsim()
        .args(["sample", "--protocol"])
        .arg(&pp)
        .args(["--init", "A=6,B=4", "--at", "2", "--trials", "500"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));

    let out = popsim()
        .args(["sample", "--protocol"])
        .arg(&pp)
        .args(["--init", "A=6,B=4", "--at", "2", "--trials", "500", "--state", "U", "--seed", "4"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    let total: u64 = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse::<u64>().unwrap())
        .sum();
    assert_eq!(total, 500);
}

#[test]
fn sample_json_emits_full_configuration_histogram() {
    let dir = tempfile::tempdir().unwrap();
    let pp = write(dir.path(), "am.pp", AM_PP);
    let out = popsim()
        .args(["sample", "--protocol"])
        .arg(&pp)
        .args(["--init", "A=6,B=4", "--at", "2", "--trials", "200", "--format", "json", "--seed", "11"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    let doc: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(doc["trials"], 200);
    let rows = doc["histogram"].as_array().unwrap();
    let total: u64 = rows.iter().map(|r| r["trials"].as_u64().unwrap()).sum();
    assert_eq!(total, 200);
    for row in rows {
        let counts = row["counts"].as_object().unwrap();
        let n: u64 = counts.values().map(|v| v.as_u64().unwrap()).sum();
        assert_eq!(n, 10);
    }
}

#[test]
fn bench_emits_one_row_per_point() {
    let dir = tempfile::tempdir().unwrap();
    let pp = write(dir.path(), "am.pp", AM_PP);
    let out = popsim()
        .args(["bench", "--protocol"])
        .arg(&pp)
        .args(["--n-list", "1e2,1e3", "--time", "1", "--reps", "3", "--methods", "batch,gillespie", "--seed", "5"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "n,method,wall_seconds,interactions");
    assert_eq!(lines.len(), 1 + 2 * 2 * 3);
    for row in &lines[1..] {
        let cells: Vec<&str> = row.split(',').collect();
        assert_eq!(cells.len(), 4);
        assert!(cells[2].parse::<f64>().unwrap() >= 0.0);
        assert!(cells[3].parse::<u64>().is_ok());
    }

    // Single population size still yields a valid single-group CSV.
    let out = popsim()
        .args(["bench", "--protocol"])
        .arg(&pp)
        .args(["--n-list", "1e2", "--time", "1", "--reps", "1", "--methods", "batch", "--seed", "5"])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(stdout(&out).lines().count(), 2);
}

#[test]
fn env_seed_is_honored() {
    let dir = tempfile::tempdir().unwrap();
    let pp = write(dir.path(), "am.pp", AM_PP);
    let run_with_env = || {
        let out = popsim()
            .env("POPSIM_SEED", "1234")
            .args(["run", "--protocol"])
            .arg(&pp)
            .args(["--init", "A=10,B=10", "--time", "4", "--interval", "1"])
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", stderr(&out));
        out.stdout
    };
    assert_eq!(run_with_env(), run_with_env());
}

#[test]
fn protocol_and_crn_flags_are_exclusive() {
    let dir = tempfile::tempdir().unwrap();
    let pp = write(dir.path(), "am.pp", AM_PP);
    let crn = write(dir.path(), "am.crn", AM_CRN);
    let out = popsim()
        .args(["run", "--protocol"])
        .arg(&pp)
        .arg("--crn")
        .arg(&crn)
        .args(["--n", "10", "--init", "A=5,B=5", "--time", "1"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn n_mismatch_with_init_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let crn = write(dir.path(), "am.crn", AM_CRN);
    let out = popsim()
        .args(["run", "--crn"])
        .arg(&crn)
        .args(["--n", "99", "--init", "A=51,B=49", "--time", "1"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_input_file_is_runtime_error() {
    let out = popsim()
        .args(["run", "--crn", "/nonexistent/am.crn", "--n", "4", "--init", "A=4", "--time", "1"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
}
