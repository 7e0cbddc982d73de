use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn mobflow(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mobflow"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

const JKO: &str = r#"
[domain]
extents = [1.0]
cells = [32]

[discretization]
tau = 4e-3
t_end = 0.02

[initial]
u = { kind = "cosine-perturbed", amplitude = 0.4 }
"#;

#[test]
fn jko_writes_report_plots_and_reproduces_from_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("run.toml"), JKO).unwrap();
    let out = mobflow(&["jko", "--config", "run.toml", "--out", "a"], tmp.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let a = tmp.path().join("a");
    for f in ["manifest.json", "report.json", "norms.csv", "energy.svg", "mass.svg", "norms.svg"] {
        assert!(a.join(f).exists(), "missing {f}");
    }
    let svg = fs::read_to_string(a.join("energy.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.contains("polyline"));

    let out = mobflow(&["jko", "--config", "a/manifest.json", "--out", "b"], tmp.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let b = tmp.path().join("b");
    let last = "u_00005.csv";
    assert_eq!(fs::read(a.join(last)).unwrap(), fs::read(b.join(last)).unwrap());
    assert_eq!(fs::read(a.join("report.json")).unwrap(), fs::read(b.join("report.json")).unwrap());
}

#[test]
fn reference_then_compare_and_diagnose() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("run.toml"), JKO).unwrap();
    for (cmd, dir) in [("jko", "j"), ("reference", "r")] {
        let out = mobflow(&[cmd, "--config", "run.toml", "--out", dir], tmp.path());
        assert_eq!(out.status.code(), Some(0), "{cmd}: {}", String::from_utf8_lossy(&out.stderr));
    }
    fs::write(
        tmp.path().join("cmp.toml"),
        "[compare]\na = \"j\"\nb = \"r\"\n",
    )
    .unwrap();
    let out = mobflow(&["compare", "--config", "cmp.toml", "--out", "c"], tmp.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(tmp.path().join("c/comparison.csv")).unwrap();
    assert!(csv.lines().count() > 2);
    assert!(tmp.path().join("c/discrepancy.svg").exists());

    fs::write(tmp.path().join("diag.toml"), "[diagnose]\ninput = \"r\"\n").unwrap();
    let out = mobflow(&["diagnose", "--config", "diag.toml"], tmp.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(tmp.path().join("r/weak_residuals.csv").exists());
}

#[test]
fn invalid_config_exits_with_code_2_and_lists_every_problem() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = "[model]\nalpha = 1.5\n\n[discretization]\ntau = -1.0\n";
    fs::write(tmp.path().join("bad.toml"), bad).unwrap();
    let out = mobflow(&["jko", "--config", "bad.toml"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("model.alpha") && err.contains("discretization.tau"), "{err}");

    fs::write(tmp.path().join("typo.toml"), "[model]\nalpah = 0.5\n").unwrap();
    let out = mobflow(&["jko", "--config", "typo.toml"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn uncovered_regime_requires_opt_in() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = "[domain]\nextents = [1.0, 1.0]\ncells = [8, 8]\n\n[model]\np = 1.2\nalpha = 0.5\n\n\
               [discretization]\ntau = 5e-3\nt_end = 0.01\n";
    fs::write(tmp.path().join("u.toml"), cfg).unwrap();
    let out = mobflow(&["jko", "--config", "u.toml"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    let out = mobflow(&["jko", "--config", "u.toml", "--allow-uncovered"], tmp.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn bad_thread_count_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("run.toml"), JKO).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_mobflow"))
        .args(["jko", "--config", "run.toml"])
        .env("MOBFLOW_THREADS", "zero")
        .current_dir(tmp.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}
