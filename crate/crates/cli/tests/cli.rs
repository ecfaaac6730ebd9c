use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"
[geometry]
width = 6.0
height = 4.0
nx = 12
ny = 8
layer_thickness = 0.5

[geometry.part]
kind = "overhang-beam"
column_x0 = 0.5
column_width = 1.5
column_height = 4.0
arm_y0 = 2.5
arm_thickness = 1.0
arm_length = 3.5

[optimization]
v_max_fraction = 0.25
max_iters = 4

[output]
vtk_every = 2
"#;

fn run(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lpbf-supportopt"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, extra: &str) -> String {
    let path = dir.join("run.toml");
    std::fs::write(&path, format!("{SMALL}{extra}")).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn simulate_writes_series_and_composite() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let out = run(&["simulate", "--config", &cfg, "--out", "sim"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let sim = dir.path().join("sim");
    for name in ["stage02_step00.vtk", "stage08_step10.vtk", "composite_step01.vtk", "layer_spread.csv"] {
        assert!(sim.join(name).exists(), "missing {name}");
    }
    assert!(!sim.join("stage01_step00.vtk").exists());
    let vtk = std::fs::read_to_string(sim.join("composite_step01.vtk")).unwrap();
    assert!(vtk.starts_with("# vtk DataFile Version 2.0"));
    assert!(vtk.contains("SCALARS T double 1"));
}

#[test]
fn optimize_log_and_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let out = run(&["optimize", "--config", &cfg, "--out", "a", "--dump-sensitivity"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let log = std::fs::read_to_string(dir.path().join("a/convergence.csv")).unwrap();
    let lines: Vec<&str> = log.lines().collect();
    assert_eq!(lines[0], "iter,F,volume_fraction,multiplier,step_halvings");
    assert_eq!(lines.len(), 5);
    let snap = std::fs::read_to_string(dir.path().join("a/design_iter0002.vtk")).unwrap();
    assert!(snap.contains("SCALARS dFdPhi double 1"));
    assert!(dir.path().join("a/design_final.vtk").exists());

    // the effective config reproduces the run
    let effective = dir.path().join("a/effective_config.toml").to_string_lossy().into_owned();
    let out = run(&["optimize", "--config", &effective, "--out", "b"], dir.path());
    assert!(out.status.success());
    let again = std::fs::read_to_string(dir.path().join("b/convergence.csv")).unwrap();
    assert_eq!(log, again);
}

#[test]
fn compare_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let out = run(&["compare", "--config", &cfg, "--out", "c"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = std::fs::read_to_string(dir.path().join("c/report.txt")).unwrap();
    assert!(report.contains("optimized") && report.contains("pillars"));
    assert!(dir.path().join("c/baseline.vtk").exists());
}

#[test]
fn config_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("empty.toml"), "").unwrap();
    let out = run(&["simulate", "--config", "empty.toml"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("parse error"));

    let cfg = write_config(dir.path(), "[process]\nt_c = 10.0\ndt_cool = 3.0\n");
    let out = run(&["simulate", "--config", &cfg], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("process.t_c"));

    let out = run(&["simulate", "--preset", "nonesuch"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    let out = run(&["simulate", "--config", "missing.toml"], dir.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn overflow_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[process]\nq = 1e308\n");
    let out = run(&["simulate", "--config", &cfg, "--out", "o"], dir.path());
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}
