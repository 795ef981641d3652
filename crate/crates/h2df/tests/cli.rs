//! End-to-end runs of the `h2df` binary in a scratch directory.

use std::path::Path;
use std::process::{Command, Output};

fn h2df(runs: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_h2df"))
        .args(args)
        .env("H2DF_RUNS_DIR", runs)
        .env_remove("H2DF_SEED")
        .output()
        .expect("binary runs")
}

fn ok(runs: &Path, args: &[&str]) -> String {
    let out = h2df(runs, args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn count_split(csv: &str, split: &str) -> usize {
    csv.lines().filter(|l| l.ends_with(&format!(",{split}"))).count()
}

#[test]
fn full_pipeline_smoke() {
    let tmp = tempfile::tempdir().unwrap();
    let runs = tmp.path().join("runs");
    let run = runs.join("smoke");
    ok(&runs, &["--name", "smoke", "gen-data", "--cycles", "1000"]);
    let csv = std::fs::read_to_string(run.join("dataset.csv")).unwrap();
    assert!(csv.starts_with("cycle,doi_fuel,p2m,soi_fuel,doi_h2,imep_prev,imep,nox,soot,mprr,split\n"));
    assert_eq!((count_split(&csv, "train"), count_split(&csv, "val"), count_split(&csv, "test")), (800, 150, 50));

    ok(&runs, &["--name", "smoke", "train-plant", "--epochs", "2"]);
    let out = ok(&runs, &["--name", "smoke", "train-agent", "--algo", "td3", "--episodes", "2"]);
    assert!(out.contains("obs_dim=16"), "{out}");
    let curves = std::fs::read_to_string(run.join("curves-td3.csv")).unwrap();
    assert!(curves.starts_with("episode,reward,moving_avg,steps,wall_ms\n"));
    assert_eq!(curves.lines().count(), 3);

    let policy = run.join("policy-td3.rlpa");
    let out = ok(&runs, &["--name", "smoke", "validate", "--policy", policy.to_str().unwrap()]);
    assert!(out.contains("steps=5000"), "{out}");
    let trace = std::fs::read_to_string(run.join("trace.csv")).unwrap();
    assert!(trace.starts_with("step,ref,imep,nox,soot,mprr,a1,a2,a3,a4,reward,q1,q2,q3,r,staging,W\n"));
    assert_eq!(trace.lines().count(), 5001);

    let exported = tmp.path().join("deploy/policy.rlpa");
    ok(&runs, &["--name", "smoke", "export", "--policy", policy.to_str().unwrap(), "--out", exported.to_str().unwrap()]);
    assert_eq!(std::fs::read(&exported).unwrap(), std::fs::read(&policy).unwrap());
    let meta: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(exported.with_extension("json")).unwrap()).unwrap();
    assert_eq!(meta["observation_size"], 16);

    let out = ok(&runs, &["--name", "smoke", "bench", "--policy", policy.to_str().unwrap(), "--iterations", "1000"]);
    assert!(out.contains("n=1000"), "{out}");
    let bench = std::fs::read_to_string(run.join("bench.csv")).unwrap();
    assert!(bench.starts_with("n,median_us,p99_us,max_us\n"));
    assert_eq!(std::fs::read_to_string(run.join("bench_samples.csv")).unwrap().lines().count(), 1001);

    for echo in ["gen-data", "train-plant", "train-agent-td3", "validate", "bench"] {
        assert!(run.join(format!("{echo}.config.toml")).is_file(), "{echo} echo missing");
    }
}

#[test]
fn no_augment_shrinks_the_observation() {
    let tmp = tempfile::tempdir().unwrap();
    let runs = tmp.path().join("runs");
    ok(&runs, &["--name", "n", "gen-data", "--cycles", "300"]);
    ok(&runs, &["--name", "n", "train-plant", "--epochs", "1"]);
    let out = ok(&runs, &["--name", "n", "train-agent", "--algo", "td3", "--no-augment", "--episodes", "1"]);
    assert!(out.contains("obs_dim=8"), "{out}");
    let out = ok(&runs, &["--name", "n", "train-agent", "--algo", "ppo", "--episodes", "1"]);
    assert!(out.contains("obs_dim=16"), "{out}");
}

#[test]
fn failures_exit_nonzero_with_one_json_line() {
    let tmp = tempfile::tempdir().unwrap();
    let runs = tmp.path().join("runs");
    let out = h2df(&runs, &["--name", "empty", "train-agent", "--algo", "ppo"]);
    assert!(!out.status.success());
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.lines().count(), 1, "{err}");
    let v: serde_json::Value = serde_json::from_str(err.trim()).unwrap();
    assert_eq!(v["status"], "error");
    assert_eq!(v["command"], "train-agent");
    assert!(v["message"].as_str().unwrap().contains("plant.rlpa"));

    let out = h2df(&runs, &["gen-data", "--cycles", "many"]);
    assert_eq!(out.status.code(), Some(2));
    let v: serde_json::Value = serde_json::from_str(String::from_utf8(out.stderr).unwrap().trim()).unwrap();
    assert_eq!(v["command"], "usage");
}

#[test]
fn runs_are_never_overwritten() {
    let tmp = tempfile::tempdir().unwrap();
    let runs = tmp.path().join("runs");
    ok(&runs, &["--name", "once", "gen-data", "--cycles", "200"]);
    let before = std::fs::read(runs.join("once/dataset.csv")).unwrap();
    let out = h2df(&runs, &["--name", "once", "gen-data", "--cycles", "300"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("already exists"));
    assert_eq!(std::fs::read(runs.join("once/dataset.csv")).unwrap(), before);
}

#[test]
fn config_file_and_seed_override_are_echoed() {
    let tmp = tempfile::tempdir().unwrap();
    let runs = tmp.path().join("runs");
    let cfg = tmp.path().join("run.toml");
    std::fs::write(&cfg, "name = \"fromfile\"\n[data]\ncycles = 250\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_h2df"))
        .args(["--config", cfg.to_str().unwrap(), "gen-data"])
        .env("H2DF_RUNS_DIR", &runs)
        .env("H2DF_SEED", "99")
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let echo = std::fs::read_to_string(runs.join("fromfile/gen-data.config.toml")).unwrap();
    assert!(echo.contains("seed = 99"), "{echo}");
    assert!(echo.contains("cycles = 250"));
    assert_eq!(std::fs::read_to_string(runs.join("fromfile/dataset.csv")).unwrap().lines().count(), 251);
}
