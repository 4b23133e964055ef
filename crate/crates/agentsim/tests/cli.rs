//! Black-box tests of the `agentsim` binary: exit codes, output file
//! handling, and agreement between the subcommands.

mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn agentsim() -> Command {
    Command::new(env!("CARGO_BIN_EXE_agentsim"))
}

fn stdout_of(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).into_owned()
}

fn stderr_of(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).into_owned()
}

/// A tiny two-host scenario with dice, written next to the test outputs.
fn write_lossy_scenario(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("lossy.toml");
    fs::write(
        &path,
        r#"
horizon = 200
seed = 1

[hosts]
count = 2
capacity = 4

[network]
inter_host_latency = 5
loss_probability = 0.25

[algorithms]
localization = false
load_distribution = false

[[agents]]
name = "talker"
host = 0
script = "stream"

[[agents]]
name = "listener"
host = 1

[scripts.stream]
steps = [{ offset = 0, to = "listener" }]
"#,
    )
    .expect("scenario written");
    path
}

#[test]
fn validate_prints_the_scenario_shape() {
    let out = agentsim()
        .arg("validate")
        .arg(common::shipped_scenario("two_cliques.toml"))
        .output()
        .expect("binary runs");
    assert!(out.status.success(), "stderr: {}", stderr_of(&out));
    let text = stdout_of(&out);
    assert!(
        text.contains("OK: 2 hosts, 8 agents, horizon 2000"),
        "unexpected validate output: {text}"
    );
}

#[test]
fn missing_scenario_exits_with_io_code_and_names_the_path() {
    let out = agentsim()
        .args(["run", "/definitely/not/here.toml"])
        .output()
        .expect("binary runs");
    assert_eq!(out.status.code(), Some(1));
    assert!(
        stderr_of(&out).contains("/definitely/not/here.toml"),
        "stderr must name the missing file: {}",
        stderr_of(&out)
    );
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let out = agentsim().arg("frobnicate").output().expect("binary runs");
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn syntax_errors_and_bad_parameters_use_distinct_codes() {
    let dir = tempfile::tempdir().unwrap();

    let broken = dir.path().join("broken.toml");
    fs::write(&broken, "this is not toml [[[").unwrap();
    let out = agentsim().arg("run").arg(&broken).output().unwrap();
    assert_eq!(out.status.code(), Some(3), "stderr: {}", stderr_of(&out));

    let invalid = dir.path().join("invalid.toml");
    fs::write(
        &invalid,
        "horizon = 10\n[hosts]\ncount = 1\ncapacity = 2\n[algorithms]\nwindow = 0\n",
    )
    .unwrap();
    let out = agentsim().arg("run").arg(&invalid).output().unwrap();
    assert_eq!(out.status.code(), Some(4), "stderr: {}", stderr_of(&out));
    assert!(stderr_of(&out).contains("algorithms.window"));
}

#[test]
fn same_seed_reruns_write_identical_trace_files() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write_lossy_scenario(dir.path());
    let first = dir.path().join("first.jsonl");
    let second = dir.path().join("second.jsonl");

    for out_path in [&first, &second] {
        let out = agentsim()
            .arg("run")
            .arg(&scenario)
            .args(["--seed", "9"])
            .arg("--out")
            .arg(out_path)
            .output()
            .unwrap();
        assert!(out.status.success(), "stderr: {}", stderr_of(&out));
    }
    assert_eq!(
        fs::read(&first).unwrap(),
        fs::read(&second).unwrap(),
        "same scenario and seed must write identical bytes"
    );
}

#[test]
fn relative_outputs_land_under_the_out_dir_env() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write_lossy_scenario(dir.path());
    let out = agentsim()
        .arg("run")
        .arg(&scenario)
        .args(["--out", "trace.jsonl", "--report", "report.json"])
        .env("AGENTSIM_OUT_DIR", dir.path())
        .current_dir("/")
        .output()
        .unwrap();
    assert!(out.status.success(), "stderr: {}", stderr_of(&out));
    assert!(dir.path().join("trace.jsonl").is_file());
    assert!(dir.path().join("report.json").is_file());
}

#[test]
fn metrics_subcommand_recomputes_the_stored_report() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write_lossy_scenario(dir.path());
    let trace = dir.path().join("trace.jsonl");
    let report = dir.path().join("report.json");
    let out = agentsim()
        .arg("run")
        .arg(&scenario)
        .arg("--out")
        .arg(&trace)
        .arg("--report")
        .arg(&report)
        .output()
        .unwrap();
    assert!(out.status.success(), "stderr: {}", stderr_of(&out));

    let out = agentsim().arg("metrics").arg(&trace).output().unwrap();
    assert!(out.status.success(), "stderr: {}", stderr_of(&out));
    let recomputed: serde_json::Value = serde_json::from_str(&stdout_of(&out)).unwrap();
    let stored: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(recomputed, stored, "metrics must agree with run --report");
}

#[test]
fn malformed_traces_exit_5() {
    let dir = tempfile::tempdir().unwrap();

    // A line that is not a record at all.
    let garbage = dir.path().join("garbage.jsonl");
    fs::write(&garbage, "not json\n").unwrap();
    let out = agentsim().arg("metrics").arg(&garbage).output().unwrap();
    assert_eq!(out.status.code(), Some(5), "stderr: {}", stderr_of(&out));
    assert!(stderr_of(&out).contains("line 1"));

    // Valid records, but no leading header.
    let headerless = dir.path().join("headerless.jsonl");
    fs::write(
        &headerless,
        "{\"at\":0,\"seq\":1,\"type\":\"send\",\"msg\":0,\"sender\":0,\"origin\":0,\"mediation\":\"direct\",\"payload\":1}\n",
    )
    .unwrap();
    let out = agentsim().arg("metrics").arg(&headerless).output().unwrap();
    assert_eq!(out.status.code(), Some(5), "stderr: {}", stderr_of(&out));
}

#[test]
fn comparing_a_trace_with_itself_reports_zero_deltas() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write_lossy_scenario(dir.path());
    let trace = dir.path().join("trace.jsonl");
    let out = agentsim()
        .arg("run")
        .arg(&scenario)
        .arg("--out")
        .arg(&trace)
        .output()
        .unwrap();
    assert!(out.status.success(), "stderr: {}", stderr_of(&out));

    let out = agentsim()
        .arg("compare")
        .arg(&trace)
        .arg(&trace)
        .output()
        .unwrap();
    assert!(out.status.success(), "stderr: {}", stderr_of(&out));
    let comparison: serde_json::Value = serde_json::from_str(&stdout_of(&out)).unwrap();
    let sends = &comparison["metrics"]["sends"];
    assert_eq!(sends["delta"], 0.0);
    assert_eq!(sends["ratio"], 1.0);
    assert_eq!(sends["left"], sends["right"]);
}

#[test]
fn sweep_summarizes_consecutive_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write_lossy_scenario(dir.path());
    let out = agentsim()
        .arg("sweep")
        .arg(&scenario)
        .args(["--runs", "4", "--base-seed", "11"])
        .output()
        .unwrap();
    assert!(out.status.success(), "stderr: {}", stderr_of(&out));
    let summary: serde_json::Value = serde_json::from_str(&stdout_of(&out)).unwrap();
    assert_eq!(summary["runs"], 4);
    assert_eq!(summary["base_seed"], 11);
    assert_eq!(summary["reports"].as_array().unwrap().len(), 4);
    assert!(summary["mean"]["sends"].as_f64().unwrap() > 0.0);
    // Different seeds under real loss: the delivery counts are not all
    // the same number.
    let delivered: Vec<u64> = summary["reports"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["delivered"].as_u64().unwrap())
        .collect();
    assert!(
        delivered.iter().any(|&d| d != delivered[0]),
        "four lossy seeds should not all deliver identically: {delivered:?}"
    );
}
