use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use kplab::format::{read_path, Field};

fn kplab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kplab")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap_or(-1)
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn files(d: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(d)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    v.sort();
    v
}

#[test]
fn passing_run_prints_json_and_exits_zero() {
    let o = kplab(&["count", "--r-max", "200", "--delta-grid", "4", "--max-exponent", "0.9"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let doc: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(doc["command"], "count");
    assert_eq!(doc["status"], "pass");
    assert_eq!(doc["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn unknown_key_is_named() {
    let o = kplab(&["count", "--r-maxx", "10"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("r_maxx"), "{}", stderr(&o));
}

#[test]
fn malformed_values_exit_one() {
    for args in [&["count", "--r-max", "ten"][..], &["nonsense"], &["solve", "--scheme", "euler"], &["count", "--threads", "0"]] {
        let o = kplab(args);
        assert_eq!(code(&o), 1, "{args:?}: {}", stderr(&o));
    }
}

#[test]
fn violation_exits_two() {
    let o = kplab(&["count", "--r-max", "200", "--delta-grid", "4", "--max-exponent", "0.0"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("violation"));
}

#[test]
fn config_file_with_overrides() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.cfg");
    let out = tmp.path().join("out");
    fs::write(&cfg, format!("command = resonance\nseed = 3\noutput = {}\n\n[resonance]\nkmax = 6\nm = 2\n", out.display())).unwrap();
    let o = kplab(&["resonance", "--config", cfg.to_str().unwrap(), "--alpha", "3"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let saved = fs::read_to_string(out.join("resonance.cfg")).unwrap();
    assert!(saved.contains("alpha = 3.0") && saved.contains("kmax = 6") && saved.contains("seed = 3"), "{saved}");
    let csv = fs::read_to_string(out.join("resonance.csv")).unwrap();
    assert!(csv.starts_with("k1,k2,") && csv.contains("\r\n"));

    // A file written for another command is refused.
    let o = kplab(&["count", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
}

#[test]
fn section_for_other_command_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.cfg");
    fs::write(&cfg, "[solve]\ndt = 0.01\n").unwrap();
    let o = kplab(&["count", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("solve"), "{}", stderr(&o));
}

#[test]
fn reruns_and_thread_counts_agree_bytewise() {
    let tmp = tempfile::tempdir().unwrap();
    let runs: [&[&str]; 3] = [
        &["count", "--r-max", "500", "--delta-grid", "4"],
        &["resonance", "--kmax", "12", "--m", "3"],
        &["sweep", "--case", "kernel_sum", "--k-max", "6", "--radii", "4,8"],
    ];
    for (i, args) in runs.iter().enumerate() {
        let mut dirs = Vec::new();
        for (j, threads) in ["1", "1", "2"].iter().enumerate() {
            let d = tmp.path().join(format!("{i}_{j}"));
            let mut a = args.to_vec();
            a.extend(["--threads", threads, "--output", d.to_str().unwrap()]);
            let o = kplab(&a);
            assert!(code(&o) != 1, "{args:?}: {}", stderr(&o));
            dirs.push(files(&d));
        }
        assert_eq!(dirs[0], dirs[1], "{args:?} rerun");
        assert_eq!(dirs[0], dirs[2], "{args:?} threads");
    }
}

#[test]
fn solve_checkpoints_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("solve");
    let o = kplab(&["solve", "--K", "4", "--M", "4", "--t-end", "0.01", "--dt", "0.005", "--save-every", "1", "--output", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let state = out.join("solve_state_00002.bin");
    let Field::Spatial(u) = read_path(&state).unwrap() else { panic!("spatial field expected") };
    assert_eq!((u.grid.k_max, u.grid.m_max), (4, 4));

    // The checkpoint is valid initial data for a new run.
    let o = kplab(&["solve", "--K", "4", "--M", "4", "--t-end", "0.01", "--dt", "0.005", "--input", state.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}

#[test]
fn validate_reports_hypotheses() {
    let o = kplab(&["validate", "--case", "bil"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = kplab(&["validate", "--case", "bil", "--b", "0.4"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("b > 1/2"), "{}", stderr(&o));
}

#[test]
fn probe_refuses_broken_hypotheses_in_verify_mode() {
    let o = kplab(&["probe", "--case", "bil", "--b", "0.4", "--budget", "2"]);
    assert_eq!(code(&o), 1, "{}", stderr(&o));
}
