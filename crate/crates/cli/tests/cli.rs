//! End-to-end runs of the `slackdown` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn slackdown(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_slackdown"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = slackdown(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn read(dir: &Path, name: &str) -> String {
    fs::read_to_string(dir.join(name)).unwrap()
}

fn flagship(dir: &Path) {
    ok(
        dir,
        &["--out", ".", "generate", "unbalanced", "--ranks", "2", "--iters", "1", "--diag-rank", "1", "--diag-app-us", "3000", "--other-app-us", "1000"],
    );
}

#[test]
fn generate_balanced_counts_phases() {
    let tmp = TempDir::new().unwrap();
    let args = ["--out", "w", "--seed", "3", "generate", "balanced", "--ranks", "4", "--iters", "100", "--app-us", "200", "--mpi-us", "50", "--jitter-pct", "5"];
    ok(tmp.path(), &args);
    let first = read(tmp.path(), "w/workload.json");
    let w = slackdown_core::Workload::from_json(&first).unwrap();
    assert_eq!(w.n_phases(), 800);
    ok(tmp.path(), &args);
    assert_eq!(read(tmp.path(), "w/workload.json"), first);
}

#[test]
fn single_rank_collectives_are_rejected() {
    let tmp = TempDir::new().unwrap();
    let out = slackdown(tmp.path(), &["generate", "balanced", "--ranks", "1", "--iters", "3", "--app-us", "100"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("n_ranks"));
}

#[test]
fn flagship_report_row() {
    let tmp = TempDir::new().unwrap();
    flagship(tmp.path());
    ok(
        tmp.path(),
        &["--out", "run", "simulate", "--workload", "workload.json", "--policy", "countdown_dvfs", "--param", "high_freq=2.4", "--baseline-param", "high_freq=2.4", "--power", "table=1.2:4,2.4:10", "--power", "uncore_w=0"],
    );
    let report = read(tmp.path(), "run/report.csv");
    let row = report.lines().nth(1).unwrap();
    let fields: Vec<&str> = row.split(',').collect();
    assert_eq!(fields[0], "countdown_dvfs");
    assert_eq!(fields[3], "0.00");
    assert_eq!(fields[5], "10.00");
    assert!(read(tmp.path(), "run/summary.txt").contains("energy_saving_pct     10.00"));
    assert!(read(tmp.path(), "run/segments.csv").starts_with("rank,t0_us,"));
}

#[test]
fn config_file_with_flag_override() {
    let tmp = TempDir::new().unwrap();
    flagship(tmp.path());
    fs::write(
        tmp.path().join("run.cfg"),
        "# flagship\nworkload = workload.json\npolicy = busy_wait\npolicy.high_freq = 2.4\nbaseline.high_freq = 2.4\npower.uncore_w = 0\n",
    )
    .unwrap();
    ok(tmp.path(), &["--config", "run.cfg", "--out", "a", "simulate"]);
    let row = read(tmp.path(), "a/report.csv");
    assert!(row.contains("\nbusy_wait,,3000.000,0.00,"), "{row}");
    assert!(row.contains(",0.00,0.00,2.4000,100.00\n"), "{row}");
    ok(tmp.path(), &["--config", "run.cfg", "--out", "b", "simulate", "--policy", "countdown_dvfs"]);
    assert!(read(tmp.path(), "b/report.csv").contains("\ncountdown_dvfs,500,"));
}

#[test]
fn missing_workload_is_an_io_error() {
    let tmp = TempDir::new().unwrap();
    let out = slackdown(tmp.path(), &["simulate", "--workload", "absent.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("absent.json"));
    assert!(!tmp.path().join("report.csv").exists());
}

#[test]
fn bad_values_are_usage_errors() {
    let tmp = TempDir::new().unwrap();
    flagship(tmp.path());
    for args in [
        vec!["simulate", "--workload", "workload.json", "--policy", "sometimes"],
        vec!["simulate", "--workload", "workload.json", "--param", "timeout_us=0"],
        vec!["simulate", "--workload", "workload.json", "--hw", "sample_period_us"],
        vec!["sweep", "--workload", "workload.json"],
        vec!["sweep", "--workload", "workload.json", "--timeouts", "10", "--spin-counts", "5"],
    ] {
        assert_eq!(slackdown(tmp.path(), &args).status.code(), Some(2), "{args:?}");
    }
}

#[test]
fn sweep_rows_match_simulate() {
    let tmp = TempDir::new().unwrap();
    flagship(tmp.path());
    ok(tmp.path(), &["--out", "s", "sweep", "--workload", "workload.json", "--timeouts", "5000,10,500,100"]);
    let sweep = read(tmp.path(), "s/sweep.csv");
    let values: Vec<&str> = sweep.lines().skip(1).map(|l| l.split(',').nth(1).unwrap()).collect();
    assert_eq!(values, ["10", "100", "500", "5000"]);
    // The longest wait is 2000 us, so 5000 never fires.
    let last = sweep.lines().last().unwrap();
    assert!(last.contains(",0.00,") && last.ends_with(",0.00,0.00,2.6000,100.00"), "{last}");

    ok(tmp.path(), &["--out", "one", "sweep", "--workload", "workload.json", "--timeouts", "100"]);
    ok(tmp.path(), &["--out", "sim", "simulate", "--workload", "workload.json", "--param", "timeout_us=100"]);
    let row = read(tmp.path(), "one/sweep.csv").lines().nth(1).unwrap().to_string();
    let sim_row = read(tmp.path(), "sim/report.csv").lines().nth(1).unwrap().to_string();
    assert_eq!(row, format!("timeout_us,100,{sim_row}"));
}

#[test]
fn busy_wait_against_itself() {
    let tmp = TempDir::new().unwrap();
    flagship(tmp.path());
    ok(tmp.path(), &["simulate", "--workload", "workload.json", "--policy", "busy_wait"]);
    let row = read(tmp.path(), "report.csv").lines().nth(1).unwrap().to_string();
    let f: Vec<&str> = row.split(',').collect();
    assert_eq!((f[3], f[5], f[6]), ("0.00", "0.00", "0.00"));
}

#[test]
fn analyze_outputs() {
    let tmp = TempDir::new().unwrap();
    flagship(tmp.path());
    ok(tmp.path(), &["simulate", "--workload", "workload.json"]);
    ok(tmp.path(), &["--out", "an", "analyze", "--segments", "baseline_segments.csv"]);
    assert!(read(tmp.path(), "an/duration_split.csv").contains("\n0,33.33,0.00,66.67,0.00\n"));
    assert!(read(tmp.path(), "an/quadrant.csv").contains("\nall,I,1,100.00,"));

    fs::write(tmp.path().join("empty.csv"), "rank,t0_us,t1_us,freq_ghz,duty,sleep,phase_index,phase_kind\n").unwrap();
    ok(tmp.path(), &["--out", "e", "analyze", "--segments", "empty.csv"]);
    assert_eq!(read(tmp.path(), "e/duration_split.csv"), "rank,app_long_pct,app_short_pct,mpi_long_pct,mpi_short_pct\n");
    let q = read(tmp.path(), "e/quadrant.csv");
    assert_eq!(q.lines().count(), 5);
    assert!(q.lines().skip(1).all(|l| l.ends_with(",0,0.00,0.0000,0.0000")));

    fs::write(
        tmp.path().join("bad.csv"),
        "rank,t0_us,t1_us,freq_ghz,duty,sleep,phase_index,phase_kind\n0,0,5,2.4,1,active,0,app\n0,5,x,2.4,1,active,1,mpi\n",
    )
    .unwrap();
    let out = slackdown(tmp.path(), &["analyze", "--segments", "bad.csv"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"));
}
