use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn vistac(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vistac")).args(args).output().expect("spawn vistac")
}

fn short_config(dir: &Path) -> String {
    let path = dir.join("short.cfg");
    fs::write(&path, "trajectory.duration = 3\nsweep.seeds = 2\n").unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn show_config_output_is_a_valid_config() {
    let dir = tempfile::tempdir().unwrap();
    let first = vistac(&["show-config", "--set", "imu.sigma_g=0.001", "--set", "sweep.axis=bias_a"]);
    assert!(first.status.success());
    let path = dir.path().join("full.cfg");
    fs::write(&path, &first.stdout).unwrap();
    let second = vistac(&["show-config", "--config", path.to_str().unwrap()]);
    assert!(second.status.success());
    assert_eq!(first.stdout, second.stdout);
    assert!(String::from_utf8_lossy(&first.stdout).contains("sweep.axis = bias_a"));
}

#[test]
fn bad_configuration_is_a_hard_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.cfg");
    fs::write(&path, "imu.sigma_g = 1\nimu.unknown = 2\n").unwrap();
    let out = vistac(&["show-config", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
    assert_eq!(vistac(&["show-config", "--set", "noequals"]).status.code(), Some(1));
}

#[test]
fn jacobian_check_passes() {
    let out = vistac(&["jacobian-check", "--points", "5"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains(": ok"));
}

#[test]
fn dump_dataset_writes_all_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short_config(dir.path());
    let out_dir = dir.path().join("data");
    let out = vistac(&["dump-dataset", "--config", &cfg, "--out", out_dir.to_str().unwrap(), "--offset-ms", "40"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let truth = fs::read_to_string(out_dir.join("truth.txt")).unwrap();
    assert!(truth.contains("time_offset = 0.04"));
    let imu = fs::read_to_string(out_dir.join("imu.csv")).unwrap();
    assert!(imu.lines().count() > 500);
    assert!(out_dir.join("frames.csv").exists());
    assert!(fs::read_to_string(out_dir.join("manifest.txt")).unwrap().contains("# seed = 0"));
}

#[test]
fn sweep_is_deterministic_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short_config(dir.path());
    let mut outputs = Vec::new();
    for threads in ["1", "3"] {
        let out_dir = dir.path().join(format!("sweep{threads}"));
        let out = vistac(&[
            "sweep", "--config", &cfg, "--out", out_dir.to_str().unwrap(), "--threads", threads,
            "--axis", "sigma_a", "--multipliers", "0,2", "--offset-ms", "30",
        ]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        let summary = fs::read(out_dir.join("summary.csv")).unwrap();
        let runs = fs::read(out_dir.join("runs.csv")).unwrap();
        assert!(out_dir.join("timing.csv").exists());
        outputs.push((summary, runs));
    }
    assert_eq!(outputs[0], outputs[1]);
    let summary = String::from_utf8(outputs[0].0.clone()).unwrap();
    assert_eq!(summary.lines().count(), 3);
    assert!(summary.lines().nth(1).unwrap().starts_with("sigma_a,0,30,2,0,"));
}

#[test]
fn failed_runs_give_exit_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("sweep");
    let out = vistac(&[
        "sweep", "--set", "trajectory.duration=0.6", "--out", out_dir.to_str().unwrap(),
        "--multipliers", "1", "--offset-ms", "0", "--seeds", "2",
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    let runs = fs::read_to_string(out_dir.join("runs.csv")).unwrap();
    assert!(runs.lines().skip(1).all(|l| !l.contains(",ok,")));
}

#[test]
fn single_run_reports_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short_config(dir.path());
    let out_dir = dir.path().join("single");
    let out = vistac(&["single", "--config", &cfg, "--seed", "4", "--offset-ms", "20", "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("[initialization]"));
    let metrics = fs::read_to_string(out_dir.join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("stage,rotation_deg"));
    assert_eq!(metrics.lines().count(), 2);
}
