use std::path::Path;
use std::process::{Command, Output};

use alma::report::{read_csv, CSV_HEADER};

fn alma(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_alma")).args(args).output().unwrap()
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn missing_out_is_a_usage_error() {
    let out = alma(&["run", "--gen", "uar", "--n", "4", "--r", "4"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_generator_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("m.csv");
    let out = alma(&["run", "--gen", "moon", "--n", "4", "--r", "4", "--out", path_str(&csv)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn run_smoke_writes_alma_and_hungarian_rows() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("m.csv");
    let out = alma(&[
        "run", "--gen", "uar", "--n", "64", "--r", "64", "--backoff", "logistic:2", "--runs", "8", "--seed", "1",
        "--out", path_str(&csv),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().next().unwrap(), CSV_HEADER);
    let rows = read_csv(&csv).unwrap();
    let algos: Vec<&str> = rows.iter().map(|r| r.algo.as_str()).collect();
    assert_eq!(algos, ["alma", "hungarian"]);
    let alma_row = &rows[0];
    assert_eq!((alma_row.n, alma_row.r, alma_row.runs), (64, 64, 8));
    assert!(alma_row.sw <= alma_row.sw_opt.unwrap() + 1e-9);
    assert!(alma_row.rel_diff.unwrap() <= 0.0);
}

#[test]
fn budget_rows_carry_the_budget_label() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("m.csv");
    let out = alma(&[
        "run", "--gen", "cartesian", "--n", "32", "--r", "32", "--cutoff", "0.25", "--runs", "4", "--budget", "3",
        "--baselines", "hungarian,greedy,random", "--out", path_str(&csv),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = read_csv(&csv).unwrap();
    let algos: Vec<&str> = rows.iter().map(|r| r.algo.as_str()).collect();
    assert_eq!(algos, ["alma@3", "hungarian", "greedy", "random"]);
}

#[test]
fn sweep_doubles_from_min_to_max() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("s.csv");
    let out = alma(&[
        "sweep", "--gen", "noisy", "--min", "4", "--max", "16", "--runs", "2", "--budgets", "2", "--out",
        path_str(&csv),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = read_csv(&csv).unwrap();
    let sizes: Vec<usize> = rows.iter().filter(|r| r.algo == "alma").map(|r| r.n).collect();
    assert_eq!(sizes, [4, 8, 16]);
    assert_eq!(rows.iter().filter(|r| r.algo == "alma@2").count(), 3);
}

#[test]
fn config_file_supplies_missing_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.conf");
    let csv = dir.path().join("m.csv");
    std::fs::write(&cfg, "gen = uar\nn = 6\nr = 5\nruns = 3\n").unwrap();
    let out = alma(&["--config", path_str(&cfg), "run", "--r", "7", "--out", path_str(&csv)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = read_csv(&csv).unwrap();
    assert_eq!((rows[0].n, rows[0].r, rows[0].runs), (6, 7, 3));
}

#[test]
fn verify_theory_passes_and_detects_an_injected_fault() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("t.csv");
    let ok = alma(&["verify-theory", "--out", path_str(&csv)]);
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stderr));
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().next().unwrap(), "check,variant,p,N,computed,bound,pass");
    assert!(text.lines().skip(1).all(|l| l.ends_with(",true")));

    let bad = alma(&["verify-theory", "--inject-fault", "0.2", "--out", path_str(&csv)]);
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn oracle_check_agrees_on_every_instance() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("o.csv");
    let out = alma(&["oracle-check", "--instances", "60", "--out", path_str(&csv)]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("60/60 equal"));
}

#[test]
fn online_writes_one_row_per_algorithm() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("on.csv");
    let out = alma(&[
        "online", "--days", "2", "--algos", "alma,bg:1", "--d-min", "0.5", "--out",
        path_str(&csv),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = read_csv(&csv).unwrap();
    let algos: Vec<&str> = rows.iter().map(|r| r.algo.as_str()).collect();
    assert_eq!(algos, ["alma/dmin=0.5", "bg:1/dmin=0.5"]);
    assert!(rows.iter().all(|r| r.comp_ratio.unwrap() <= 1.0 + 1e-12));
}
