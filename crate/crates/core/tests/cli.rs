use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn subtype(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_subtype")).args(args).output().expect("binary runs")
}

fn path(dir: &TempDir, name: &str) -> String {
    dir.path().join(name).to_string_lossy().into_owned()
}

fn simulate(dir: &TempDir, seed: &str) -> String {
    let cohort = path(dir, "cohort.csv");
    let out = subtype(&[
        "simulate", "--controls", "60", "--patients", "60", "--p", "20", "--effect", "3", "--seed", seed, "--output",
        &cohort, "--truth", &path(dir, "truth.csv"),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    cohort
}

fn read(p: impl AsRef<Path>) -> String {
    fs::read_to_string(p).unwrap()
}

#[test]
fn fit_is_byte_identical_across_runs() {
    let dir = TempDir::new().unwrap();
    let cohort = simulate(&dir, "3");
    for method in ["hydra", "chimera", "kmeans", "hierarchical", "nmf", "magic"] {
        let mut docs = Vec::new();
        for run in 0..2 {
            let model = path(&dir, &format!("{method}{run}.json"));
            let out = subtype(&["fit", "--input", &cohort, "--k", "2", "--method", method, "--seed", "7", "--output", &model]);
            assert!(matches!(out.status.code(), Some(0 | 3)), "{method}: {}", String::from_utf8_lossy(&out.stderr));
            docs.push((read(&model), read(path(&dir, &format!("{method}{run}.assignments.csv")))));
        }
        assert_eq!(docs[0], docs[1], "{method}");
    }
}

#[test]
fn zero_k_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    let cohort = simulate(&dir, "1");
    let out = subtype(&["fit", "--input", &cohort, "--k", "0", "--output", &path(&dir, "m.json")]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--k"));
    assert!(!dir.path().join("m.json").exists());
}

#[test]
fn assign_replays_fit_assignments() {
    let dir = TempDir::new().unwrap();
    let cohort = simulate(&dir, "5");
    for method in ["hydra", "chimera", "kmeans", "hierarchical", "nmf", "magic"] {
        let model = path(&dir, &format!("{method}.json"));
        let fit = subtype(&["fit", "--input", &cohort, "--k", "2", "--method", method, "--output", &model]);
        assert_eq!(fit.status.code(), Some(0), "{method}");
        let assigned = subtype(&["assign", "--input", &cohort, "--model", &model, "--method", method]);
        assert!(assigned.status.success(), "{method}: {}", String::from_utf8_lossy(&assigned.stderr));
        let table = read(path(&dir, &format!("{method}.assignments.csv")));
        assert_eq!(String::from_utf8(assigned.stdout).unwrap(), table, "{method}");
        assert!(table.lines().skip(1).any(|l| l.ends_with(",reference")));
    }
}

#[test]
fn assign_rejects_other_model_kind() {
    let dir = TempDir::new().unwrap();
    let cohort = simulate(&dir, "2");
    let model = path(&dir, "m.json");
    assert!(subtype(&["fit", "--input", &cohort, "--k", "2", "--method", "kmeans", "--output", &model]).status.success());
    let out = subtype(&["assign", "--input", &cohort, "--model", &model, "--method", "hydra"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("kmeans"));
}

#[test]
fn controls_only_input_yields_reference_rows() {
    let dir = TempDir::new().unwrap();
    let cohort = simulate(&dir, "4");
    let model = path(&dir, "m.json");
    assert!(subtype(&["fit", "--input", &cohort, "--k", "2", "--output", &model]).status.success());
    let text = read(&cohort);
    let mut lines = text.lines();
    let header = lines.next().unwrap();
    let label_col = header.split(',').position(|c| c == "label").unwrap();
    let mut controls = String::from(header);
    controls.push('\n');
    for line in lines.filter(|l| l.split(',').nth(label_col) == Some("-1")) {
        controls.push_str(line);
        controls.push('\n');
    }
    let only = path(&dir, "controls.csv");
    fs::write(&only, controls).unwrap();
    let out = subtype(&["assign", "--input", &only, "--model", &model]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = String::from_utf8(out.stdout).unwrap();
    assert_eq!(table.lines().count(), 61);
    assert!(table.lines().skip(1).all(|l| l.ends_with(",reference")));
}

#[test]
fn simulate_is_deterministic() {
    let a = subtype(&["simulate", "--controls", "10", "--patients", "10", "--p", "10", "--seed", "9"]);
    let b = subtype(&["simulate", "--controls", "10", "--patients", "10", "--p", "10", "--seed", "9"]);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let c = subtype(&["simulate", "--controls", "10", "--patients", "10", "--p", "10", "--seed", "10"]);
    assert_ne!(a.stdout, c.stdout);
}

#[test]
fn scan_k_selects_planted_k() {
    let dir = TempDir::new().unwrap();
    let cohort = simulate(&dir, "6");
    let report = path(&dir, "scan.json");
    let out = subtype(&[
        "scan-k", "--input", &cohort, "--method", "kmeans", "--kmin", "2", "--kmax", "4", "--resamples", "4", "--output",
        &report,
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let json: serde_json::Value = serde_json::from_str(&read(&report)).unwrap();
    assert_eq!(json["selected_k"], 2);
}
