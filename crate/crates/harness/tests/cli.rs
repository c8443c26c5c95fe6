//! End-to-end runs of the `actlab` binary.

use std::path::Path;
use std::process::{Command, Output};

use actlab_core::tasks::Dataset;
use actlab_harness::report::read_report;

const TINY: &str = r#"{
  "n_train": 60,
  "n_test": 20,
  "hidden": [8, 8],
  "epochs": 3,
  "batch_size": 20,
  "lr_sweep": [0.003, 0.005],
  "seeds": [1, 2]
}"#;

fn actlab(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_actlab"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn tiny_config(dir: &Path) -> String {
    let p = dir.join("tiny.json");
    std::fs::write(&p, TINY).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn help_and_version_exit_zero() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(code(&actlab(d.path(), &["--help"])), 0);
    assert_eq!(code(&actlab(d.path(), &["--version"])), 0);
}

#[test]
fn usage_errors_exit_one() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(code(&actlab(d.path(), &["no-such-command"])), 1);
    assert_eq!(code(&actlab(d.path(), &["train", "--bogus"])), 1);
    assert_eq!(code(&actlab(d.path(), &["train", "--task", "hexagon"])), 1);
    let cfg = tiny_config(d.path());
    assert_eq!(code(&actlab(d.path(), &["train", "--config", &cfg, "--workers", "0"])), 1);
    std::fs::write(d.path().join("bad.json"), r#"{"epochz": 3}"#).unwrap();
    let o = actlab(d.path(), &["train", "--config", "bad.json"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("epochz"));
}

#[test]
fn runtime_failures_exit_two() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(code(&actlab(d.path(), &["report", "--input", "missing"])), 2);
}

#[test]
fn gen_data_round_trips() {
    let d = tempfile::tempdir().unwrap();
    let cfg = tiny_config(d.path());
    let o = actlab(d.path(), &["gen-data", "--config", &cfg, "--out", "data"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let train = Dataset::read(&d.path().join("data"), "train").unwrap();
    let test = Dataset::read(&d.path().join("data"), "test").unwrap();
    assert_eq!((train.len(), test.len(), train.dim()), (60, 20, 9));
    assert_eq!(train.task_name, "triangle");
}

#[test]
fn train_writes_run_and_history() {
    let d = tempfile::tempdir().unwrap();
    let cfg = tiny_config(d.path());
    let o = actlab(d.path(), &["train", "--config", &cfg, "--out", "t", "--workers", "2"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let run: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.path().join("t/run.json")).unwrap()).unwrap();
    assert_eq!(run["train_losses"].as_array().unwrap().len(), 3);
    let history = std::fs::read_to_string(d.path().join("t/history.csv")).unwrap();
    assert_eq!(history.lines().count(), 4);
}

#[test]
fn compare_reports_are_reproducible() {
    let d = tempfile::tempdir().unwrap();
    let cfg = tiny_config(d.path());
    for out in ["a", "b"] {
        let o = actlab(d.path(), &["compare", "--config", &cfg, "--out", out, "--workers", "2"]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["summary.json", "trials.csv", "plot.csv"] {
        let a = std::fs::read(d.path().join("a").join(f)).unwrap();
        let b = std::fs::read(d.path().join("b").join(f)).unwrap();
        assert_eq!(a, b, "{f} differs between runs");
    }
    let trials = std::fs::read_to_string(d.path().join("a/trials.csv")).unwrap();
    assert_eq!(trials.lines().count(), 1 + 2 * 2);
    let r = read_report(&d.path().join("a")).unwrap();
    assert_eq!(r.trials.len(), 2);
    assert_eq!(r.init_seed_policy, "shared");
    let shown = actlab(d.path(), &["report", "--input", "a"]);
    assert_eq!(code(&shown), 0);
    assert!(String::from_utf8_lossy(&shown.stdout).contains("seagull@0"));
}

#[test]
fn worker_count_does_not_change_results() {
    let d = tempfile::tempdir().unwrap();
    let cfg = tiny_config(d.path());
    for (out, w) in [("one", "1"), ("three", "3")] {
        let o = actlab(d.path(), &["compare", "--config", &cfg, "--out", out, "--workers", w]);
        assert_eq!(code(&o), 0);
    }
    assert_eq!(
        std::fs::read(d.path().join("one/summary.json")).unwrap(),
        std::fs::read(d.path().join("three/summary.json")).unwrap()
    );
}

#[test]
fn seed_flag_shifts_trial_seeds() {
    let d = tempfile::tempdir().unwrap();
    let cfg = tiny_config(d.path());
    let o = actlab(d.path(), &["compare", "--config", &cfg, "--out", "s", "--seed", "40"]);
    assert_eq!(code(&o), 0);
    let r = read_report(&d.path().join("s")).unwrap();
    let seeds: Vec<u64> = r.trials.iter().map(|t| t.seed).collect();
    assert_eq!(seeds, vec![40, 41]);
}

#[test]
fn layer_sweep_covers_every_hidden_layer() {
    let d = tempfile::tempdir().unwrap();
    let cfg = tiny_config(d.path());
    let o = actlab(d.path(), &["layer-sweep", "--config", &cfg, "--out", "sw"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for k in 0..2 {
        assert!(d.path().join(format!("sw/layer_{k}/summary.json")).exists());
    }
    let sweep = std::fs::read_to_string(d.path().join("sw/sweep.csv")).unwrap();
    assert_eq!(sweep.lines().count(), 3);
    let shown = actlab(d.path(), &["report", "--input", "sw"]);
    assert!(String::from_utf8_lossy(&shown.stdout).contains("seagull@1"));
}

#[test]
fn analysis_commands_write_json() {
    let d = tempfile::tempdir().unwrap();
    let o = actlab(d.path(), &["rank-demo", "--n", "30", "--d", "3", "--m", "10", "--out", "r"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let ranks: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.path().join("r/rank.json")).unwrap()).unwrap();
    assert_eq!(ranks[0]["achieved_rank"], 10);

    let cfg = tiny_config(d.path());
    let o = actlab(
        d.path(),
        &["exchange-check", "--config", &cfg, "--samples", "50", "--out", "x"],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let x: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.path().join("x/exchange.json")).unwrap()).unwrap();
    assert_eq!(x["label_invariance"]["count"], 12);
}
