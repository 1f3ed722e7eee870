use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use covdetect_harness::{run, ExperimentConfig, ExperimentKind};

const BIN: &str = env!("CARGO_BIN_EXE_covdetect");

const SMALL_PHASE: &str = "n_devices = 60\nseq_lens = [5, 7]\nactives = [3, 15]\ntrials = 4\n";

const SMALL_ROC: &str = "n_devices = 60\nn_active = 4\nseq_len = 8\nn_antennas = 32\nn_samples = 100\n\
sim_trials = 10\nn_thresholds = 11\nactives = [4]\nseq_lens = [8, 10]\ntrials = 3\n";

fn invoke(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(BIN);
    cmd.args(args).env_remove("COVDETECT_THREADS");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn run_ok(args: &[&str]) {
    run_ok_env(args, &[]);
}

fn run_ok_env(args: &[&str], env: &[(&str, &str)]) {
    let out = invoke(args, env);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("config.toml");
    fs::write(&path, body).unwrap();
    path.to_string_lossy().into_owned()
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
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
fn identical_runs_write_identical_files() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL_ROC);
    for exp in ["phase", "roc", "compare-nnls"] {
        let a = tmp.path().join(format!("{exp}-a"));
        let b = tmp.path().join(format!("{exp}-b"));
        run_ok(&[exp, "--config", &cfg, "--seed", "11", "--out", a.to_str().unwrap()]);
        run_ok_env(&[exp, "--config", &cfg, "--seed", "11", "--out", b.to_str().unwrap()], &[("COVDETECT_THREADS", "1")]);
        let (fa, fb) = (files(&a), files(&b));
        assert!(!fa.is_empty());
        assert_eq!(fa, fb, "{exp} output differs between runs");
    }
}

#[test]
fn rerun_from_echo_reproduces_the_file() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL_ROC);
    let first = tmp.path().join("first");
    run_ok(&["roc", "--config", &cfg, "--seed", "5", "--out", first.to_str().unwrap()]);
    let echo = first.join("roc_predicted.csv");
    let second = tmp.path().join("second");
    run_ok(&["roc", "--config", echo.to_str().unwrap(), "--out", second.to_str().unwrap()]);
    assert_eq!(files(&first), files(&second));
}

#[test]
fn phase_csv_has_the_documented_columns() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL_PHASE);
    let out = tmp.path().join("o");
    run_ok(&["phase", "--config", &cfg, "--seed", "1", "--out", out.to_str().unwrap()]);
    let text = fs::read_to_string(out.join("phase_grid.csv")).unwrap();
    let body: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(body[0], "L,K,L2_over_N,K_over_N,success_fraction,n_trials,n_inconclusive");
    assert_eq!(body.len(), 1 + 2 * 2);
    let first: Vec<&str> = body[1].split(',').collect();
    assert_eq!(&first[..4], &["5", "3", "0.4166666666666667", "0.05"]);
    assert_eq!(first[5], "4");
}

#[test]
fn json_output_parses() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL_PHASE);
    let out = tmp.path().join("o");
    run_ok(&["phase", "--config", &cfg, "--seed", "1", "--out", out.to_str().unwrap(), "--format", "json"]);
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("phase_grid.json")).unwrap()).unwrap();
    assert_eq!(v["experiment"], "phase");
    assert_eq!(v["rows"].as_array().unwrap().len(), 4);
}

#[test]
fn single_arm_gives_a_single_error_column() {
    let mut cfg = ExperimentConfig::parse(&format!("{SMALL_ROC}arms = [\"mle\"]\n")).unwrap();
    cfg.experiment = Some(ExperimentKind::CompareNnls);
    cfg.seed = Some(2);
    let rec = run(&cfg).unwrap();
    let err = rec.table("error").unwrap();
    assert_eq!(err.columns, ["L", "L2_over_N", "error_mle"]);
    assert_eq!(err.rows.len(), 2);
}

#[test]
fn arms_share_the_received_covariance() {
    let mut cfg = ExperimentConfig::parse(SMALL_ROC).unwrap();
    cfg.experiment = Some(ExperimentKind::CompareNnls);
    cfg.seed = Some(3);
    let rec = run(&cfg).unwrap();
    let draws = rec.table("draws").unwrap();
    assert_eq!(draws.rows.len(), 2 * 3);
    for row in &draws.rows {
        assert_eq!(row[2], row[3]);
    }
    let distinct: std::collections::HashSet<String> = draws.rows.iter().map(|r| r[2].render()).collect();
    assert_eq!(distinct.len(), draws.rows.len());
}

#[test]
fn invalid_config_fails_with_a_line_number() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "seed = 1\n\nn_devices = 10\nbogus = 3\n");
    let out = invoke(&["phase", "--config", &cfg], &[]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 4"), "{err}");

    let cfg = write_config(tmp.path(), "seed = 1\ntrials = 0\n");
    let out = invoke(&["phase", "--config", &cfg], &[]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
}

#[test]
fn seed_is_mandatory() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL_PHASE);
    let out = invoke(&["phase", "--config", &cfg, "--out", tmp.path().join("o").to_str().unwrap()], &[]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("seed"));
}
