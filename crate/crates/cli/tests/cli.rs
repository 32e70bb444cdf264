//! End-to-end runs of the `disentangle` binary.

use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_disentangle"))
        .args(args)
        .env_remove("DISENTANGLE_OUT")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

#[test]
fn help_and_bad_flags() {
    assert_eq!(code(&run(&["--help"])), 0);
    assert_eq!(code(&run(&["sweep", "--bogus"])), 2);
    assert_eq!(code(&run(&["frobnicate"])), 2);
}

#[test]
fn unknown_config_key_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let res = run(&["sweep", "--out", out, "--set", "colour=blue"]);
    assert_eq!(code(&res), 2);
    assert!(String::from_utf8_lossy(&res.stderr).contains("colour"));
}

#[test]
fn bad_grid_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    assert_eq!(code(&run(&["sweep", "--out", out, "--grid", "2,1"])), 2);
    assert_eq!(code(&run(&["sweep", "--out", out, "--grid", "0:1:5:log"])), 2);
}

#[test]
fn small_sweep_writes_all_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("s");
    let res = run(&[
        "sweep", "--out", out.to_str().unwrap(), "--n", "8", "--grid", "0.25:4:41:log",
    ]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    for f in [
        "sweep.csv",
        "report.txt",
        "config.resolved",
        "elbo.png",
        "inference_error.png",
        "recon.png",
        "ci_loss.png",
    ] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let csv = String::from_utf8(read(&out.join("sweep.csv"))).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "beta,loss,elbo,mie,tie,recon,ci_loss,residual,converged,seed");
    assert_eq!(csv.lines().count(), 42);
}

#[test]
fn coarse_grid_fails_the_checks_but_keeps_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("s");
    let res = run(&["sweep", "--out", out.to_str().unwrap(), "--n", "6", "--grid", "0.5,1,2"]);
    assert_eq!(code(&res), 1);
    assert!(String::from_utf8_lossy(&res.stderr).contains("envelope"));
    assert!(out.join("sweep.csv").exists() && out.join("report.txt").exists());
}

#[test]
fn single_point_sweep_skips_the_checks() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("s");
    let res = run(&[
        "sweep", "--out", out.to_str().unwrap(), "--n", "1", "--k", "1", "--a", "1", "--grid", "1",
    ]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    assert!(String::from_utf8(read(&out.join("report.txt"))).unwrap().contains("skipped"));
}

#[test]
fn resolved_config_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("first");
    let res = run(&[
        "sweep", "--out", first.to_str().unwrap(), "--n", "6", "--grid", "0.25:4:41:log", "--seed", "9",
    ]);
    assert_eq!(code(&res), 0);
    let second = dir.path().join("second");
    let res = run(&[
        "sweep",
        "--config",
        first.join("config.resolved").to_str().unwrap(),
        "--out",
        second.to_str().unwrap(),
    ]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    assert_eq!(read(&first.join("sweep.csv")), read(&second.join("sweep.csv")));
}

#[test]
fn gen_data_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for d in [&a, &b] {
        let res = run(&["gen-data", "--n", "10", "--seed", "7", "--out", d.to_str().unwrap()]);
        assert_eq!(code(&res), 0);
        assert!(String::from_utf8_lossy(&res.stdout).contains("n=10"));
    }
    for f in ["dataset.csv", "images.bin"] {
        assert_eq!(read(&a.join(f)), read(&b.join(f)), "{f}");
    }
    assert_eq!(std::fs::metadata(a.join("images.bin")).unwrap().len(), 10 * 1600 * 8);
}

#[test]
fn unwritable_output_is_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, b"x").unwrap();
    let out = blocker.join("sub");
    assert_eq!(code(&run(&["gen-data", "--n", "3", "--out", out.to_str().unwrap()])), 2);
}

#[test]
fn missing_dataset_without_generation_is_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let res = run(&[
        "train-deep",
        "--no-generate",
        "--realizations",
        "1",
        "--epochs",
        "1",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&res), 2);
    assert!(String::from_utf8_lossy(&res.stderr).contains("gen-data"));
}

#[test]
fn check_filters_by_group_and_seed() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let res = run(&["check", "--only", "gradients", "--seed", "1..2", "--out", out]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stdout));
    let csv = String::from_utf8(read(&dir.path().join("checks.csv"))).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert!(!rows.is_empty());
    assert!(rows.iter().all(|r| r.split(',').nth(1) == Some("gradients")));
    assert!(rows.iter().any(|r| r.starts_with("1,")) && rows.iter().any(|r| r.starts_with("2,")));
    assert_eq!(code(&run(&["check", "--only", "nonsense", "--out", out])), 2);
}

#[test]
fn train_deep_smoke_run() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("deep");
    let res = run(&[
        "train-deep",
        "--realizations",
        "1",
        "--epochs",
        "1",
        "--set",
        "n_samples=100",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let recs = String::from_utf8(read(&out.join("deep_records.csv"))).unwrap();
    assert_eq!(recs.lines().count(), 4);
    for f in ["deep_summary.csv", "loss_trace.csv", "deep_tie.png", "models/beta1_r0.bvae"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    // The generated dataset is reused, and refused when absent.
    let res = run(&[
        "train-deep",
        "--no-generate",
        "--realizations",
        "1",
        "--epochs",
        "1",
        "--set",
        &format!("data_dir={}", out.join("data").display()),
        "--out",
        dir.path().join("again").to_str().unwrap(),
    ]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
}
