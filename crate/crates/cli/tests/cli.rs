use std::path::Path;
use std::process::{Command, Output};

fn drl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_drl"))
        .args(args)
        .env("DRL_THREADS", "1")
        .output()
        .expect("spawn drl")
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("exp.toml");
    std::fs::write(&path, body).unwrap();
    path.to_string_lossy().into_owned()
}

const SMALL: &str = r#"
n_seeds = 2
seed = 5
output_dir = "out"

[dataset]
synthetic = { n = 300, d = 3, seed = 2 }

[[method]]
method = "gssg"
max_iters = 100

[[method]]
method = "sgd"
max_iters = 100

[cv]
k = 3
max_iters = 50
"#;

#[test]
fn run_writes_traces_relative_to_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = drl(&["run", &cfg]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("gssg") && stdout.contains("erm_cv"));
    for f in ["trace_gssg_seed5.csv", "trace_sgd_seed6.csv", "summary.csv", "manifest.csv", "cv_report_seed5.csv"] {
        assert!(dir.path().join("out").join(f).exists(), "missing {f}");
    }
}

#[test]
fn overrides_select_methods_seed_and_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let target = dir.path().join("elsewhere");
    let out = drl(&["run", &cfg, "--seed", "40", "--method", "sgd", "--out", target.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(target.join("trace_sgd_seed40.csv").exists());
    assert!(!target.join("trace_gssg_seed40.csv").exists());
}

#[test]
fn cv_runs_only_the_baseline() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = drl(&["cv", &cfg]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let outdir = dir.path().join("out");
    assert!(outdir.join("cv_report_seed6.csv").exists());
    assert!(!outdir.join("trace_gssg_seed5.csv").exists());
}

#[test]
fn plotdata_merges_traces() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    assert!(drl(&["run", &cfg]).status.success());
    let merged = dir.path().join("long.csv");
    let out = drl(&["plotdata", dir.path().join("out").to_str().unwrap(), "--out", merged.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(merged).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "method,seed,iteration,cumulative_samples,wall_clock_s,test_misclassification"
    );
    // 2 methods x 2 seeds x 10 records each.
    assert_eq!(lines.count(), 40);
}

#[test]
fn bad_inputs_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.toml");
    let out = drl(&["run", missing.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));

    let cfg = write_config(dir.path(), "n_seeds = 1\nbogus = 3\n[dataset]\nsynthetic = { n = 10, d = 2 }\n");
    assert_eq!(drl(&["run", &cfg]).status.code(), Some(1));

    let cfg = write_config(dir.path(), SMALL);
    assert!(!drl(&["run", &cfg, "--method", "adam"]).status.success());
    assert!(!drl(&["run", &cfg, "--rho", "-1"]).status.success());
}
