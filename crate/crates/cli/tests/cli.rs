//! Drives the installed binary the way an operator would.

use std::fs;
use std::path::PathBuf;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_urbansim"))
}

/// Fresh per-test directory under the target tmp dir.
fn tmp(name: &str) -> PathBuf {
    let path = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join(name);
    let _ = fs::remove_dir_all(&path);
    fs::create_dir_all(&path).unwrap();
    path
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn episode_writes_trace_and_summary() {
    let dir = tmp("episode");
    let out = bin()
        .args(["run-episode", "--scenario", "follow-lead", "--out"])
        .arg(&dir)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(stdout(&out).starts_with("success"), "{}", stdout(&out));

    let trace = fs::read_to_string(dir.join("trace.csv")).unwrap();
    let mut lines = trace.lines();
    assert_eq!(lines.next(), Some(urbansim::sim::TRACE_HEADER));
    assert!(lines.next().is_some(), "trace has no rows");
    assert!(dir.join("config.txt").exists(), "config not echoed");
}

#[test]
fn missing_town_file_is_a_usage_error() {
    let out = bin()
        .args([
            "run-episode",
            "--scenario",
            "follow-lead",
            "--town",
            "/no/such/town.town",
            "--out",
        ])
        .arg(tmp("missing-town"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("town"), "{}", stderr(&out));
}

#[test]
fn unknown_scenario_is_a_usage_error() {
    let out = bin()
        .args(["run-episode", "--scenario", "no-such-scenario", "--out"])
        .arg(tmp("unknown-scenario"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("unknown scenario"), "{}", stderr(&out));
}

#[test]
fn same_seed_gives_byte_identical_traces() {
    let dirs = [tmp("seed-a"), tmp("seed-b")];
    for dir in &dirs {
        let out = bin()
            .args([
                "run-episode",
                "--scenario",
                "follow-lead",
                "--perception",
                "test",
                "--seed",
                "42",
                "--out",
            ])
            .arg(dir)
            .output()
            .unwrap();
        assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    }
    let a = fs::read(dirs[0].join("trace.csv")).unwrap();
    let b = fs::read(dirs[1].join("trace.csv")).unwrap();
    assert_eq!(a, b, "reruns with one seed diverged");
}

#[test]
fn tune_probe_evaluates_given_gains() {
    let out = bin()
        .args(["tune-probe", "--ku", "2", "--tu", "1"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    assert!(
        text.contains("kp 1.200000 ki 0.500000 kd 0.125000"),
        "{text}"
    );
}

#[test]
fn tune_probe_sweep_reports_consistent_gains() {
    let out = bin().arg("tune-probe").output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = stdout(&out);
    let grab = |marker: &str| -> f64 {
        let at = text.find(marker).unwrap_or_else(|| panic!("{text}"));
        text[at + marker.len()..]
            .split_whitespace()
            .next()
            .unwrap()
            .parse()
            .unwrap()
    };
    let ku = grab("measured ku ");
    let kp = grab("gains   kp ");
    assert!(ku > 0.0);
    assert!((kp - 0.6 * ku).abs() < 1e-9, "kp {kp} vs 0.6 ku {ku}");
}

#[test]
fn tune_probe_with_tiny_ceiling_is_inconclusive() {
    let out = bin()
        .args(["tune-probe", "--kp-max", "0.001"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(stdout(&out).contains("inconclusive"), "{}", stdout(&out));
}

#[test]
fn benchmark_runs_a_small_suite_file() {
    let dir = tmp("bench");
    let suite_path = dir.join("smoke.suite");
    fs::write(
        &suite_path,
        "suite smoke\n  towns town-a\n  tiers clean\n  tasks straight\n  episodes 2\n  \
         seed 5\n  cruise_cap_kmh 20\n  min_route_m 60\n",
    )
    .unwrap();

    let out = bin()
        .args(["run-benchmark", "--parallel", "2", "--suite"])
        .arg(&suite_path)
        .arg("--out")
        .arg(&dir)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(stdout(&out).contains("town-a"), "{}", stdout(&out));

    let json = fs::read_to_string(dir.join("report.json")).unwrap();
    let value: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(value["cells"].as_array().unwrap().len(), 1);
    assert!(dir.join("report.txt").exists());
    assert!(dir.join("config.txt").exists());
}

#[test]
fn invalid_suite_file_is_a_usage_error() {
    let dir = tmp("bad-suite");
    let suite_path = dir.join("broken.suite");
    fs::write(&suite_path, "suite broken\n  episodes many\n").unwrap();
    let out = bin()
        .args(["run-benchmark", "--suite"])
        .arg(&suite_path)
        .arg("--out")
        .arg(&dir)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn config_dump_round_trips_through_a_file() {
    let dir = tmp("dump");
    let first = bin().args(["config", "dump"]).output().unwrap();
    assert_eq!(first.status.code(), Some(0));
    let dump_path = dir.join("defaults.cfg");
    fs::write(&dump_path, &first.stdout).unwrap();

    let second = bin()
        .args(["config", "dump", "--config"])
        .arg(&dump_path)
        .output()
        .unwrap();
    assert_eq!(second.stdout, first.stdout, "dump does not re-load cleanly");

    let with_set = bin()
        .args(["config", "dump", "--set", "controller.cruise_kp=0.9"])
        .output()
        .unwrap();
    assert!(stdout(&with_set).contains("cruise_kp 0.9"), "{}", stdout(&with_set));
}
