use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_metagrad-lab")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn small_mrp(out: &Path) -> Output {
    bin(&[
        "mrp",
        "--seed",
        "4",
        "--out",
        out.to_str().unwrap(),
        "--override",
        "iterations=12",
        "--override",
        "mc_shots=2",
        "--override",
        "n=2",
        "--override",
        "log_every=4",
    ])
}

#[test]
fn mrp_run_writes_the_output_layout() {
    let dir = tempfile::tempdir().unwrap();
    let o = small_mrp(dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["config.resolved", "metrics.jsonl", "plots/returns.csv", "plots/meta_params.csv", "plots/bias_variance.csv"] {
        assert!(dir.path().join(f).is_file(), "missing {f}");
    }
    let metrics = fs::read_to_string(dir.path().join("metrics.jsonl")).unwrap();
    assert_eq!(metrics.lines().count(), 3);
    let resolved = fs::read_to_string(dir.path().join("config.resolved")).unwrap();
    assert!(resolved.lines().any(|l| l.replace(' ', "") == "seed=4"), "{resolved}");
}

#[test]
fn same_seed_gives_identical_bytes() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert_eq!(code(&small_mrp(a.path())), 0);
    assert_eq!(code(&small_mrp(b.path())), 0);
    for f in ["config.resolved", "metrics.jsonl", "plots/meta_params.csv"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn export_rebuilds_plots() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&small_mrp(dir.path())), 0);
    let plots = dir.path().join("plots");
    let before = fs::read(plots.join("meta_params.csv")).unwrap();
    fs::remove_dir_all(&plots).unwrap();
    let o = bin(&["export", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read(plots.join("meta_params.csv")).unwrap(), before);
}

#[test]
fn config_file_is_read_and_overridden() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "# tiny run\nestimator = fixed\niterations = 3\nseed = 1\n").unwrap();
    let out = dir.path().join("out");
    let o = bin(&["mrp", "--config", cfg.to_str().unwrap(), "--seed", "9", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let resolved = fs::read_to_string(out.join("config.resolved")).unwrap();
    let keys: Vec<String> = resolved.lines().map(|l| l.replace(' ', "")).collect();
    assert!(keys.contains(&"seed=9".to_string()));
    assert!(keys.contains(&"estimator=fixed".to_string()));
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    for bad in [
        vec!["mrp", "--out", out, "--override", "bogus=1"],
        vec!["mrp", "--out", out, "--override", "n=0"],
        vec!["mrp", "--out", out, "--override", "board_size=12"],
        vec!["bias-variance", "--out", out, "--override", "kappa=1.5"],
        vec!["snake", "--out", out, "--override", "meta_batch_size=8"],
        vec!["mrp", "--out", out, "--config", "/nonexistent/run.cfg"],
        vec!["mrp", "--seed", "minus-one"],
        vec!["train"],
    ] {
        let o = bin(&bad);
        assert_eq!(code(&o), 2, "{bad:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
    assert!(!dir.path().join("metrics.jsonl").exists());
}

#[test]
fn divergence_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let o = bin(&[
        "mrp",
        "--out",
        dir.path().to_str().unwrap(),
        "--override",
        "inner_optimizer=sgd",
        "--override",
        "alpha=1e8",
        "--override",
        "estimator=nstep",
        "--override",
        "iterations=50",
    ]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("non-finite"));
}

#[test]
fn export_of_a_missing_log_fails() {
    let dir = tempfile::tempdir().unwrap();
    let o = bin(&["export", "--out", dir.path().to_str().unwrap()]);
    assert_ne!(code(&o), 0);
}
