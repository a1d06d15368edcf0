use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::json;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_poisson-eigenpath"));
    c.env_remove("POISSON_EIGENPATH_THREADS");
    c
}

fn write_config(dir: &Path, v: serde_json::Value) -> PathBuf {
    let p = dir.join("config.json");
    std::fs::write(&p, v.to_string()).unwrap();
    p
}

fn grover_config() -> serde_json::Value {
    json!({
        "instance": {"kind": "grover", "n": 8, "marked": [3]},
        "generator": {"kind": "jump", "unitary": {"kind": "exp"}},
        "schedule": {"kind": "adaptive", "p": 1.5, "epsilon": 0.1}
    })
}

fn trajectory_config() -> serde_json::Value {
    json!({
        "instance": {"kind": "grover", "n": 8, "marked": [3]},
        "generator": {"kind": "jump", "unitary": {"kind": "exp"}},
        "schedule": {"kind": "constant", "value": 5.0},
        "execution": {"kind": "trajectories", "n_traj": 500, "master_seed": 3}
    })
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("process exited normally")
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap())
        })
        .collect();
    out.sort();
    out
}

#[test]
fn run_writes_all_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), grover_config());
    let out = tmp.path().join("out");
    let o = bin().args(["run", "--config"]).arg(&cfg).arg("--out").arg(&out).output().unwrap();
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let names: Vec<String> = files(&out).into_iter().map(|(n, _)| n).collect();
    assert_eq!(names, ["bound_report.json", "run_result.json", "samples.csv"]);
    let reports: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out.join("bound_report.json")).unwrap()).unwrap();
    assert_eq!(reports[0]["satisfied"], json!(true));
    assert!(std::fs::read_to_string(out.join("samples.csv")).unwrap().starts_with("s,fidelity\n"));
}

#[test]
fn invalid_epsilon_is_rejected_before_any_output() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), grover_config());
    let out = tmp.path().join("out");
    let o = bin()
        .args(["run", "--config"])
        .arg(&cfg)
        .args(["--set", "schedule.epsilon=1.5", "--out"])
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("epsilon"));
    assert!(!out.exists());
}

#[test]
fn malformed_config_and_zero_threads_are_validation_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.json");
    std::fs::write(&cfg, "{\"instance\": ").unwrap();
    let o = bin().args(["run", "--config"]).arg(&cfg).arg("--out").arg(tmp.path().join("o")).output().unwrap();
    assert_eq!(code(&o), 2);

    let cfg = write_config(tmp.path(), grover_config());
    let o = bin()
        .args(["run", "--threads", "0", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(tmp.path().join("o"))
        .output()
        .unwrap();
    assert_eq!(code(&o), 2);
}

#[test]
fn trajectory_outputs_are_reproducible_across_thread_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), trajectory_config());
    let mut runs = Vec::new();
    for (k, threads) in ["1", "4", "4"].into_iter().enumerate() {
        let out = tmp.path().join(format!("out{k}"));
        let o = bin()
            .env("POISSON_EIGENPATH_THREADS", threads)
            .args(["run", "--allow-violations", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(&out)
            .output()
            .unwrap();
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        runs.push(files(&out));
    }
    assert_eq!(runs[0].len(), 4);
    assert_eq!(runs[0], runs[1]);
    assert_eq!(runs[1], runs[2]);
    let lines = String::from_utf8(runs[0].iter().find(|(n, _)| n == "trajectories.jsonl").unwrap().1.clone()).unwrap();
    assert_eq!(lines.lines().count(), 500);
}

#[test]
fn threads_variable_is_validated() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), grover_config());
    let o = bin()
        .env("POISSON_EIGENPATH_THREADS", "lots")
        .args(["run", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(tmp.path().join("o"))
        .output()
        .unwrap();
    assert_eq!(code(&o), 2);
}

#[test]
fn seed_flag_changes_trajectories() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), trajectory_config());
    let mut outputs = Vec::new();
    for seed in ["11", "12"] {
        let out = tmp.path().join(format!("s{seed}"));
        let o = bin()
            .args(["run", "--allow-violations", "--seed", seed, "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(&out)
            .output()
            .unwrap();
        assert_eq!(code(&o), 0);
        outputs.push(std::fs::read(out.join("trajectories.jsonl")).unwrap());
    }
    assert_ne!(outputs[0], outputs[1]);
}

#[test]
fn sweep_writes_table_and_slope() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), grover_config());
    let out = tmp.path().join("out");
    let o = bin()
        .args(["sweep", "--axis", "N", "--values", "8,16,32", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let table = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert_eq!(table.lines().count(), 4);
    let summary: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out.join("sweep_summary.json")).unwrap()).unwrap();
    assert!(summary["slope"].as_f64().is_some_and(|s| s > 0.0));
}

#[test]
fn injected_rhs_fault_fails_verification() {
    let tmp = tempfile::tempdir().unwrap();
    let clean = bin()
        .args(["verify", "--suite", "dynamics", "--out"])
        .arg(tmp.path().join("clean"))
        .output()
        .unwrap();
    assert_eq!(code(&clean), 0, "{}", String::from_utf8_lossy(&clean.stdout));

    let broken = bin()
        .args(["verify", "--suite", "dynamics", "--fault-injection", "broken-rhs", "--out"])
        .arg(tmp.path().join("broken"))
        .output()
        .unwrap();
    assert_eq!(code(&broken), 1);
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(tmp.path().join("broken/verify_report.json")).unwrap()).unwrap();
    assert_eq!(report["passed"], json!(false));
    assert!(String::from_utf8_lossy(&broken.stdout).contains("FAIL"));
}

#[test]
fn help_documents_outputs_and_exit_codes() {
    let o = bin().arg("--help").output().unwrap();
    let text = String::from_utf8_lossy(&o.stdout);
    for needle in ["run_result.json", "bound_report.json", "sweep.csv", "verify_report.json", "Exit status"] {
        assert!(text.contains(needle), "missing {needle}");
    }
}
