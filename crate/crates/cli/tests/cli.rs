use std::path::PathBuf;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sunivr"))
}

fn temp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("sunivr-cli-{tag}-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

const MICRO: &str = "[model]\n\
modes = 2\n\
particles = 8\n\
omega = -1.0\n\
chi = -1.0\n\
[initial]\n\
w1_re = 0.41421356237309515\n\
w1_im = 0.0\n\
[grid]\n\
points_per_axis = 5\n\
half_width = 0.6\n\
[filter]\n\
lambda = 10.0\n\
[time]\n\
horizon = 1.0\n\
outputs = 5\n";

#[test]
fn run_produces_artifacts_and_exits_zero() {
    let dir = temp_dir("run");
    let cfg = dir.join("micro.cfg");
    std::fs::write(&cfg, MICRO).unwrap();
    let out = bin()
        .args(["run", cfg.to_str().unwrap(), "--out", dir.join("out").to_str().unwrap()])
        .args(["--workers", "2"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for name in ["szbar_exact.csv", "szbar_semiclassical.csv", "szbar_classical.csv", "survival.csv", "summary.txt", "config.resolved.cfg"] {
        assert!(dir.join("out/micro").join(name).is_file(), "missing {name}");
    }
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn invalid_config_exits_nonzero_with_line_anchor() {
    let dir = temp_dir("bad");
    let cfg = dir.join("bad.cfg");
    std::fs::write(&cfg, MICRO.replace("lambda = 10.0", "lambda = maybe")).unwrap();
    let out = bin()
        .args(["run", cfg.to_str().unwrap(), "--out", dir.join("out").to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bad.cfg:13"), "stderr: {err}");
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn violated_accept_threshold_exits_two() {
    let dir = temp_dir("accept");
    let cfg = dir.join("strict.cfg");
    std::fs::write(&cfg, format!("{MICRO}[accept]\nmax_dev_semiclassical = 1e-15\n")).unwrap();
    let out = bin()
        .args(["run", cfg.to_str().unwrap(), "--out", dir.join("out").to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn suite_isolates_failures() {
    let dir = temp_dir("suite");
    let cfgs = dir.join("cfgs");
    std::fs::create_dir_all(&cfgs).unwrap();
    std::fs::write(cfgs.join("a_broken.cfg"), "[model]\nmodes = two\n").unwrap();
    std::fs::write(cfgs.join("b_good.cfg"), MICRO).unwrap();
    let out = bin()
        .args(["suite", cfgs.to_str().unwrap(), "--out", dir.join("out").to_str().unwrap()])
        .output()
        .unwrap();
    // the broken config fails, the good one still completes
    assert_eq!(out.status.code(), Some(1));
    assert!(dir.join("out/b_good/summary.txt").is_file());
    assert!(dir.join("out/suite_summary.txt").is_file());
    std::fs::remove_dir_all(&dir).ok();
}
