//! End-to-end checks of the `pgda` binary and the files it writes.

use std::path::Path;
use std::process::Command;

use pgda_rl::experiment::OracleRow;
use pgda_rl::trace::{read_csv_file, AsyncRow, SyncRow};

fn pgda(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_pgda")).args(args).output().unwrap()
}

fn write_config(dir: &Path, body: &str) -> String {
    let p = dir.join("run.toml");
    std::fs::write(&p, body).unwrap();
    p.to_string_lossy().into_owned()
}

const SYNC: &str = r#"
algorithm = "sync"
seeds = [0]
checkpoints = [100, 1000, 2000]
[mdp]
builtin = "pilot4x2"
gamma = 0.8
[sync]
k_max = 2000
"#;

const ASYNC: &str = r#"
algorithm = "async"
seeds = [0]
checkpoints = [1000, 2000, 5000]
[mdp]
builtin = "frozenlake4x4"
[async]
k_max = 5000
"#;

#[test]
fn solve_writes_oracle_and_constants() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), ASYNC);
    let out = dir.path().join("solve");
    let o = pgda(&["solve", "--config", &cfg, "--out", out.to_str().unwrap(), "--constants"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows: Vec<OracleRow> = read_csv_file(out.join("oracle.csv")).unwrap();
    assert_eq!(rows.len(), 16);
    assert!(rows.iter().all(|r| r.v_star.is_finite()));
    assert!(out.join("constants.toml").exists());
}

#[test]
fn sync_run_and_trace_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SYNC);
    let out = dir.path().join("sync");
    let o = pgda(&["sync", "--config", &cfg, "--out", out.to_str().unwrap(), "--seeds", "4,5"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for seed in [4, 5] {
        let rows: Vec<SyncRow> = read_csv_file(out.join(format!("trace_seed{seed}.csv"))).unwrap();
        assert_eq!(rows.iter().map(|r| r.k).collect::<Vec<_>>(), vec![0, 100, 1000, 2000]);
        let mut buf = Vec::new();
        pgda_rl::trace::write_csv(&rows, &mut buf).unwrap();
        let again: Vec<SyncRow> = pgda_rl::trace::read_csv(buf.as_slice()).unwrap();
        assert_eq!(again, rows);
    }
    for f in ["summary.csv", "config.toml"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let d = pgda(&["diagnose", "--config", &cfg, "--out", out.to_str().unwrap(), "--seeds", "4,5"]);
    assert!(d.status.success(), "{}", String::from_utf8_lossy(&d.stderr));
}

#[test]
fn async_run_then_diagnose() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), ASYNC);
    let out = dir.path().join("async");
    let o = pgda(&["async", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows: Vec<AsyncRow> = read_csv_file(out.join("trace_seed0.csv")).unwrap();
    assert_eq!(rows.last().unwrap().k, 5000);
    let d = pgda(&["diagnose", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(d.status.success(), "{}", String::from_utf8_lossy(&d.stderr));
    let text = std::fs::read_to_string(out.join("diagnose.txt")).unwrap();
    assert!(text.contains("visitation floor"));
}

#[test]
fn experiment_uses_configured_algorithm() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SYNC);
    let out = dir.path().join("exp");
    let o = pgda(&["experiment", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    let _: Vec<SyncRow> = read_csv_file(out.join("trace_seed0.csv")).unwrap();
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.toml");
    assert_eq!(pgda(&["solve", "--config", missing.to_str().unwrap()]).status.code(), Some(2));
    let bad = write_config(dir.path(), "algorithm = \"sync\"\nseeds = [0]\nunknown_key = 1\n[mdp]\nbuiltin = \"rate3\"\n");
    assert_eq!(pgda(&["sync", "--config", &bad]).status.code(), Some(2));
    let neg = write_config(dir.path(), &format!("{SYNC}\n[params]\neta_v = -1.0\n"));
    assert_eq!(pgda(&["sync", "--config", &neg]).status.code(), Some(2));
}

#[test]
fn inconsistent_traces_exit_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SYNC);
    let out = dir.path().join("out");
    assert!(pgda(&["sync", "--config", &cfg, "--out", out.to_str().unwrap(), "--seeds", "0,1"]).status.success());
    // drop the last checkpoint of one seed so the grids no longer line up
    let path = out.join("trace_seed1.csv");
    let text = std::fs::read_to_string(&path).unwrap();
    let kept: Vec<&str> = text.lines().collect();
    std::fs::write(&path, kept[..kept.len() - 1].join("\n") + "\n").unwrap();
    let code = pgda(&["diagnose", "--config", &cfg, "--out", out.to_str().unwrap(), "--seeds", "0,1"]).status.code();
    assert_eq!(code, Some(3));
}
