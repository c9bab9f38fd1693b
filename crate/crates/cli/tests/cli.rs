use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_extremal")).args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs").join(name)
}

#[test]
fn missing_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["sample", "--config", "missing.cfg", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("missing.cfg"));
}

#[test]
fn malformed_config_reports_position() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "seed = 1\nalpha = = 1.0\n").unwrap();
    let o = run(&["sample", "--config", path.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("line 2") && err.contains("column"), "{err}");
}

#[test]
fn bad_expression_reports_position() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    let src = "seed = 1\nalpha = 1.0\n[space]\nkind = \"unit-interval\"\n[[integrand]]\nname = \"f\"\nexpr = \"ind([0, 1) x)\"\n";
    std::fs::write(&path, src).unwrap();
    let o = run(&["check-integrability", "--config", path.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("'f'") && err.contains("line") && err.contains("column"), "{err}");
}

#[test]
fn unknown_suite_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["verify", "--suite", "nope", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn invalid_beta_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["regen-sim", "--beta", "1.5", "--n", "1000", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn verify_pathwise_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["verify", "--suite", "pathwise", "--seed", "7", "--out", dir.path().to_str().unwrap()]);
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert_eq!(o.status.code(), Some(0), "{stdout}");
    assert!(stdout.starts_with("PASS 2 pathwise"), "{stdout}");
    assert!(dir.path().join("verify.json").exists());
}

#[test]
fn regen_sim_writes_path() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&[
        "regen-sim",
        "--beta",
        "0.3",
        "--n",
        "200000",
        "--candidate-draws",
        "0",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("regen-sim.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("t,x"));
    assert_eq!(lines.count(), 200_001);
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("regen-sim.json")).unwrap()).unwrap();
    assert_eq!(json["report"]["regime"], "sub");
    assert_eq!(json["seed"], 0);
}

#[test]
fn check_integrability_writes_verdicts() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&[
        "check-integrability",
        "--config",
        config("ladder.toml").to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("check-integrability.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    assert!(csv.lines().nth(1).unwrap().starts_with("geometric,2,"));
}

#[test]
fn sample_is_reproducible_across_workers() {
    let cfg = config("ladder.toml");
    let runs: Vec<_> = ["1", "3"]
        .iter()
        .map(|w| {
            let dir = tempfile::tempdir().unwrap();
            let o = run(&[
                "sample",
                "--config",
                cfg.to_str().unwrap(),
                "--replicates",
                "300",
                "--workers",
                w,
                "--out",
                dir.path().to_str().unwrap(),
            ]);
            assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
            let csv = std::fs::read(dir.path().join("sample.csv")).unwrap();
            let meta = std::fs::read(dir.path().join("sample.csv.json")).unwrap();
            (csv, meta)
        })
        .collect();
    assert_eq!(runs[0], runs[1]);
    let meta: serde_json::Value = serde_json::from_slice(&runs[0].1).unwrap();
    assert_eq!(meta["master_seed"], 5);
    assert_eq!(meta["replicates"], 300);
}
