use std::path::{Path, PathBuf};
use std::process::Command as Process;

use mflqg::cli::{main_with_args, parse_args, Command, EXIT_INVALID, EXIT_IO, EXIT_NUMERICAL, EXIT_OK, EXIT_USAGE};
use mflqg::output::Format;
use mflqg::scenario::AL_SCENARIO;

fn scenario_file(dir: &Path, name: &str, edit: impl Fn(&str) -> String) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, edit(AL_SCENARIO)).unwrap();
    path
}

/// The example on a coarse grid with a small ensemble.
fn small(text: &str) -> String {
    text.replace("steps = 1000", "steps = 100").replace("paths = 20000", "paths = 300\nrecord = 3")
}

fn run(args: &[&str]) -> i32 {
    main_with_args(std::iter::once("mflqg").chain(args.iter().copied()))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn parses_the_documented_examples() {
    let c = parse_args(["mflqg", "solve", "--scenario", "al.toml", "--dt", "0.001", "--out", "out"]).unwrap();
    assert_eq!(c.command, Command::Solve);
    assert_eq!(c.scenario_path.as_deref(), Some(Path::new("al.toml")));
    assert_eq!(c.dt_override, Some(0.001));
    assert_eq!(c.out_dir, Path::new("out"));
    assert_eq!(c.format, Format::Csv);

    let c = parse_args(["mflqg", "al-example"]).unwrap();
    assert_eq!(c.command, Command::AlExample);
    assert_eq!(c.out_dir, Path::new("results"));
    assert!(c.scenario_path.is_none());

    let c = parse_args(["mflqg", "simulate", "--scenario", "x.toml", "--paths", "50", "--seed", "7", "--format", "json", "--gzip"])
        .unwrap();
    assert_eq!((c.paths, c.seed, c.format, c.gzip), (Some(50), Some(7), Format::Json, true));
}

#[test]
fn usage_errors() {
    for args in [
        &["simulate"][..],
        &["solve", "--scenario", "a.toml", "--bogus"],
        &["solve", "--scenario", "a.toml", "--dt", "-0.1"],
        &["solve", "--scenario", "a.toml", "--dt", "nan"],
        &["simulate", "--scenario", "a.toml", "--paths", "0"],
        &["frobnicate"],
        &[],
    ] {
        assert_eq!(run(args), EXIT_USAGE, "{args:?}");
    }
    assert_eq!(run(&["--help"]), EXIT_OK);
    assert_eq!(run(&["--version"]), EXIT_OK);
}

#[test]
fn gate_rejects_nonzero_m() {
    let dir = tempfile::tempdir().unwrap();
    let file = scenario_file(dir.path(), "m.toml", |t| t.replace("N = -1.0", "N = -1.0\nM = 0.5"));
    let out = dir.path().join("out");
    assert_eq!(run(&["solve", "--scenario", s(&file), "--out", s(&out)]), EXIT_INVALID);
    assert!(!out.join("riccati.csv").exists());

    let err = mflqg::scenario::Scenario::load(&file).unwrap();
    let gate = mflqg_core::validate::special_case_gate(&err.problem);
    assert_eq!(gate.violations, vec!["M".to_string()]);
}

#[test]
fn riccati_blow_up_is_a_numerical_failure() {
    let dir = tempfile::tempdir().unwrap();
    let file = scenario_file(dir.path(), "blow.toml", |t| t.replace("H = 0.01", "H = 0.01\nA = -400.0"));
    assert_eq!(run(&["solve", "--scenario", s(&file), "--out", s(&dir.path().join("o"))]), EXIT_NUMERICAL);
}

#[test]
fn io_failures() {
    let dir = tempfile::tempdir().unwrap();
    let file = scenario_file(dir.path(), "al.toml", small);
    // A directory cannot be created below a regular file, even as root.
    let blocker = dir.path().join("blocker");
    std::fs::write(&blocker, b"").unwrap();
    assert_eq!(run(&["solve", "--scenario", s(&file), "--out", s(&blocker.join("out"))]), EXIT_IO);
    assert_eq!(run(&["solve", "--scenario", s(&dir.path().join("missing.toml"))]), EXIT_IO);
}

#[test]
fn malformed_scenario_is_invalid() {
    let dir = tempfile::tempdir().unwrap();
    let file = scenario_file(dir.path(), "bad.toml", |t| t.replace("b = 1.0", "b = [1.0, 2.0]"));
    assert_eq!(run(&["solve", "--scenario", s(&file), "--out", s(&dir.path().join("o"))]), EXIT_INVALID);
}

fn manifest(dir: &Path) -> String {
    std::fs::read_to_string(dir.join("manifest.json")).unwrap()
}

#[test]
fn solve_writes_a_manifest_that_matches_the_files() {
    let dir = tempfile::tempdir().unwrap();
    let file = scenario_file(dir.path(), "al.toml", small);
    let out = dir.path().join("o");
    assert_eq!(run(&["solve", "--scenario", s(&file), "--out", s(&out)]), EXIT_OK);
    let entries: Vec<mflqg::output::FileEntry> = serde_json::from_str(&manifest(&out)).unwrap();
    let names: Vec<&str> = entries.iter().map(|e| e.name.as_str()).collect();
    assert_eq!(names, ["cost.csv", "errata.md", "law.csv", "riccati.csv"]);
    for e in &entries {
        let bytes = std::fs::read(out.join(&e.name)).unwrap();
        assert_eq!(bytes.len() as u64, e.size);
    }
    let riccati = std::fs::read_to_string(out.join("riccati.csv")).unwrap();
    assert_eq!(riccati.lines().next().unwrap(), "t,Sigma_0,Phi_0,Psi_0,Ex_0,Ep_0,Gamma_0,Lambda_0");
    assert_eq!(riccati.lines().count(), 102);
}

#[test]
fn runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let file = scenario_file(dir.path(), "al.toml", small);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        assert_eq!(run(&["simulate", "--scenario", s(&file), "--out", s(out), "--gzip"]), EXIT_OK);
    }
    assert_eq!(manifest(&a), manifest(&b));
    assert!(manifest(&a).contains("paths.csv.gz"));
}

#[test]
fn worker_count_does_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    let file = scenario_file(dir.path(), "al.toml", small);
    let mut manifests = vec![];
    for workers in ["1", "3"] {
        let out = dir.path().join(format!("w{workers}"));
        let status = Process::new(env!("CARGO_BIN_EXE_mflqg"))
            .args(["simulate", "--scenario", s(&file), "--out", s(&out)])
            .env("MFLQG_WORKERS", workers)
            .output()
            .unwrap();
        assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
        manifests.push(manifest(&out));
    }
    assert_eq!(manifests[0], manifests[1]);
}

#[test]
fn json_and_csv_carry_the_same_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let file = scenario_file(dir.path(), "al.toml", small);
    let (c, j) = (dir.path().join("c"), dir.path().join("j"));
    assert_eq!(run(&["solve", "--scenario", s(&file), "--out", s(&c)]), EXIT_OK);
    assert_eq!(run(&["solve", "--scenario", s(&file), "--out", s(&j), "--format", "json"]), EXIT_OK);

    let csv = std::fs::read_to_string(c.join("riccati.csv")).unwrap();
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(j.join("riccati.json")).unwrap()).unwrap();
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let columns: Vec<&str> = json["columns"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
    assert_eq!(header, columns);
    let rows = json["rows"].as_array().unwrap();
    assert_eq!(rows.len(), lines.clone().count());
    for (line, row) in lines.zip(rows) {
        for (text, v) in line.split(',').zip(row.as_array().unwrap()) {
            // 17 significant digits identify an f64 uniquely.
            assert_eq!(text.parse::<f64>().unwrap().to_bits(), v.as_f64().unwrap().to_bits());
        }
    }
}

#[test]
fn dt_override_refines_the_analytic_cost() {
    let dir = tempfile::tempdir().unwrap();
    let file = scenario_file(dir.path(), "al.toml", |t| t.to_string());
    let mut costs = vec![];
    for (dt, name) in [("0.001", "a"), ("0.0005", "b")] {
        let out = dir.path().join(name);
        assert_eq!(run(&["solve", "--scenario", s(&file), "--dt", dt, "--out", s(&out)]), EXIT_OK);
        let text = std::fs::read_to_string(out.join("cost.csv")).unwrap();
        let last = text.lines().last().unwrap();
        assert!(last.starts_with("J_analytic,"));
        costs.push(last.split(',').nth(1).unwrap().parse::<f64>().unwrap());
    }
    assert!(((costs[0] - costs[1]) / costs[1]).abs() < 1e-6, "{costs:?}");
}
