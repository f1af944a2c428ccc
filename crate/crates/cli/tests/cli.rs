//! Binary-level checks: subcommand plumbing, artifacts, and exit codes.

use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_dronecov"))
}

fn gen_world(dir: &Path) -> std::path::PathBuf {
    let status = bin()
        .args(["gen-world", "--preset", "paper-tiny", "--out"])
        .arg(dir)
        .status()
        .unwrap();
    assert!(status.success());
    dir.join("paper-tiny.exp.toml")
}

#[test]
fn oracle_prints_the_optimum() {
    let dir = tempfile::tempdir().unwrap();
    let spec = gen_world(dir.path());
    let output = bin()
        .args(["oracle", "--spec"])
        .arg(&spec)
        .output()
        .unwrap();
    assert!(output.status.success());
    let stdout = String::from_utf8(output.stdout).unwrap();
    assert!(
        stdout.contains("optimal team utility G* = 1"),
        "stdout: {stdout}"
    );
    assert!(stdout.contains("one optimal joint trajectory"));
}

#[test]
fn oracle_cap_exceeded_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let spec = gen_world(dir.path());
    let output = bin()
        .args(["oracle", "--spec"])
        .arg(&spec)
        .args(["--cap", "7"])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(4));
    let stderr = String::from_utf8(output.stderr).unwrap();
    assert!(stderr.contains("4096"), "stderr: {stderr}");
}

#[test]
fn malformed_specs_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("broken.toml");
    std::fs::write(&spec, "schema_version = 1\nname = \"x\"\n").unwrap();
    let output = bin().args(["train", "--spec"]).arg(&spec).output().unwrap();
    assert_eq!(output.status.code(), Some(2));

    let output = bin()
        .args(["train", "--spec", "/nonexistent/spec.toml"])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));

    // Unknown subcommands are parse errors.
    let output = bin().args(["frobnicate"]).output().unwrap();
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn train_writes_run_artifacts_and_respects_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let spec = gen_world(dir.path());
    let out = dir.path().join("runs");
    let status = bin()
        .args(["train", "--spec"])
        .arg(&spec)
        .args([
            "--out",
            &out.to_string_lossy(),
            "--seed",
            "7",
            "--override",
            "train.max_iterations=40",
            "--override",
            "train.stop_on_convergence=false",
        ])
        .status()
        .unwrap();
    assert!(status.success());
    let run = out.join("vdrl-s7");
    for file in ["metrics.csv", "checkpoint.ckpt", "episode.log"] {
        assert!(run.join(file).is_file(), "missing {file}");
    }
    let metrics = std::fs::read_to_string(run.join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("# dronecov-metrics v1\n"));
    assert!(metrics.contains("# spec_hash: "));
    assert_eq!(
        metrics.lines().filter(|l| l.starts_with("vdrl-s7")).count(),
        40
    );

    let ckpt = std::fs::read_to_string(run.join("checkpoint.ckpt")).unwrap();
    let params = dronecov_core::checkpoint::parse_param_set(&ckpt).unwrap();
    assert_eq!(params.num_dbs(), 2);
}

#[test]
fn compare_orders_vdrl_above_iac() {
    let dir = tempfile::tempdir().unwrap();
    let spec = gen_world(dir.path());
    let out = dir.path().join("runs");
    let output = bin()
        .args(["compare", "--spec"])
        .arg(&spec)
        .args([
            "--out",
            &out.to_string_lossy(),
            "--algos",
            "vdrl,iac,oracle",
            "--jobs",
            "3",
            "--override",
            "seeds=[1, 2, 3]",
            "--override",
            "train.max_iterations=2500",
        ])
        .output()
        .unwrap();
    assert!(output.status.success());
    let stdout = String::from_utf8(output.stdout).unwrap();
    let summary = std::fs::read_to_string(out.join("summary.csv")).unwrap();
    assert_eq!(stdout, summary);

    let g_of = |algo: &str| -> f64 {
        summary
            .lines()
            .find(|l| l.starts_with(&format!("{algo},")))
            .unwrap()
            .split(',')
            .nth(4)
            .unwrap()
            .parse()
            .unwrap()
    };
    assert!(g_of("vdrl") >= g_of("iac"), "summary:\n{summary}");
    assert_eq!(g_of("oracle"), 1.0);
}

#[test]
fn plot_data_extracts_series() {
    let dir = tempfile::tempdir().unwrap();
    let spec = gen_world(dir.path());
    let out = dir.path().join("runs");
    let status = bin()
        .args(["train", "--spec"])
        .arg(&spec)
        .args([
            "--out",
            &out.to_string_lossy(),
            "--seed",
            "2",
            "--override",
            "train.max_iterations=60",
            "--override",
            "train.stop_on_convergence=false",
        ])
        .status()
        .unwrap();
    assert!(status.success());

    let plots = dir.path().join("plots");
    for figure in ["fig-4", "fig-5", "fig-7", "fig-10"] {
        let status = bin()
            .args(["plot-data", "--metrics"])
            .arg(&out)
            .args(["--figure", figure, "--out"])
            .arg(&plots)
            .status()
            .unwrap();
        assert!(status.success(), "plot-data {figure} failed");
    }
    // fig-4 curves are nondecreasing cumulative rates.
    let fig4 = std::fs::read_to_string(plots.join("fig4-vdrl-s2-dbs0.csv")).unwrap();
    let mut prev = -1.0f64;
    for line in fig4
        .lines()
        .filter(|l| !l.starts_with('#') && !l.starts_with("time_s"))
    {
        let v: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
        assert!(v >= prev);
        prev = v;
    }
    assert!(plots.join("fig10.csv").is_file());

    let output = bin()
        .args(["plot-data", "--metrics"])
        .arg(&out)
        .args(["--figure", "fig-42", "--out"])
        .arg(&plots)
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn meta_train_writes_losses_and_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let spec = gen_world(dir.path());
    let out = dir.path().join("runs");
    let status = bin()
        .args(["meta-train", "--spec"])
        .arg(&spec)
        .args([
            "--out",
            &out.to_string_lossy(),
            "--override",
            "meta.iterations=4",
            "--override",
            "seeds=[9]",
        ])
        .status()
        .unwrap();
    assert!(status.success());
    let run = out.join("meta-s9");
    let csv = std::fs::read_to_string(run.join("meta_metrics.csv")).unwrap();
    assert!(csv.starts_with("# dronecov-meta-metrics v1\n"));
    assert_eq!(csv.lines().filter(|l| !l.starts_with('#')).count(), 1 + 4);
    let ckpt = std::fs::read_to_string(run.join("checkpoint.ckpt")).unwrap();
    assert!(dronecov_core::checkpoint::parse_param_set(&ckpt).is_ok());
}
