use std::io::{BufRead, BufReader, Read};
use std::path::Path;
use std::process::{Command, Output, Stdio};

use serde_json::Value;

fn ecgpipe() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ecgpipe"))
}

fn ok(out: Output) -> String {
    assert!(
        out.status.success(),
        "exit {}: {}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn lines(path: &Path) -> usize {
    std::fs::read_to_string(path).unwrap().lines().count()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn gen_model_init_and_infer_on_csv() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("ecg.csv");
    let model = dir.path().join("model.json");
    let infer = dir.path().join("infer.jsonl");
    ok(ecgpipe()
        .args(["gen", "--duration-s", "65", "--seed", "4", "--out"])
        .arg(&csv)
        .output()
        .unwrap());
    // header plus 65 s at 256 Hz
    assert_eq!(lines(&csv), 1 + 65 * 256);
    ok(ecgpipe().args(["model-init", "--out"]).arg(&model).output().unwrap());
    let stdout = ok(ecgpipe()
        .args(["infer", "--model"])
        .arg(&model)
        .arg("--in")
        .arg(&csv)
        .arg("--out")
        .arg(&infer)
        .output()
        .unwrap());
    assert!(stdout.contains("6 segments"), "{stdout}");
    assert_eq!(lines(&infer), 6);
}

#[test]
fn tcp_broker_publish_and_analyze() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("ecg.csv");
    let recv = dir.path().join("recv.jsonl");
    let send = dir.path().join("send.jsonl");
    let infer = dir.path().join("infer.jsonl");
    let out = dir.path().join("analysis");
    ok(ecgpipe()
        .args(["gen", "--duration-s", "20", "--out"])
        .arg(&csv)
        .output()
        .unwrap());

    let mut broker = ecgpipe()
        .args([
            "broker",
            "--listen",
            "127.0.0.1:0",
            "--exit-after-sessions",
            "1",
            "--recv-log",
        ])
        .arg(&recv)
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut broker_out = BufReader::new(broker.stdout.take().unwrap());
    let mut first = String::new();
    broker_out.read_line(&mut first).unwrap();
    let addr = first
        .trim()
        .strip_prefix("broker listening on ")
        .expect(&first)
        .to_string();

    ok(ecgpipe()
        .args(["publish", "--broker", &addr, "--pace", "40", "--in"])
        .arg(&csv)
        .arg("--send-log")
        .arg(&send)
        .output()
        .unwrap());
    let mut rest = String::new();
    broker_out.read_to_string(&mut rest).unwrap();
    assert!(broker.wait().unwrap().success());
    assert!(rest.contains("1 sessions ended, 0 protocol errors"), "{rest}");
    assert_eq!(lines(&send), 320);
    assert_eq!(lines(&recv), 320);

    ok(ecgpipe()
        .args(["infer", "--session", "phone-a", "--in"])
        .arg(&recv)
        .arg("--out")
        .arg(&infer)
        .output()
        .unwrap());
    assert_eq!(lines(&infer), 2);

    ok(ecgpipe()
        .arg("analyze")
        .arg("--send-log")
        .arg(&send)
        .arg("--recv-log")
        .arg(&recv)
        .arg("--infer-log")
        .arg(&infer)
        .arg("--out-dir")
        .arg(&out)
        .output()
        .unwrap());
    let report = read_json(&out.join("analysis.json"));
    assert_eq!(report["matched"], 5120);
    assert_eq!(report["missing"], 0);
    assert_eq!(report["corrupted"], 0);
    assert!(report["latency"]["mean_ms"].as_f64().unwrap() >= 0.0);
    assert!(report["budget"]["p99_ms"].is_number());
    assert!(std::fs::read_to_string(out.join("latency_hist.csv"))
        .unwrap()
        .starts_with("bin_start_ms,count\n"));
    assert!(out.join("duration_hist.csv").exists());
}

#[test]
fn run_writes_reports_and_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("experiment.json");
    std::fs::write(
        &config,
        r#"{"parts": [["4g", "5g"]], "runs_per_part": 1, "run_duration_s": 20, "out_dir": "results"}"#,
    )
    .unwrap();
    let stdout = ok(ecgpipe()
        .args(["run", "--pace", "1000", "--config"])
        .arg(&config)
        .current_dir(dir.path())
        .output()
        .unwrap());
    assert!(stdout.contains("part 1 run 1: completed"), "{stdout}");
    let results = dir.path().join("results");
    let report = read_json(&results.join("report.json"));
    assert_eq!(report["totals"]["completed_runs"], 1);
    assert_eq!(report["runs"][0]["sessions"][1]["profile"], "5g");
    for name in [
        "timing.json",
        "1_1_broker_recv.jsonl",
        "1_1_a_send.jsonl",
        "1_1_b_infer.jsonl",
        "1_1_a_latency_hist.csv",
        "1_1_b_duration_hist.csv",
    ] {
        assert!(results.join(name).exists(), "{name}");
    }
}

#[test]
fn invalid_config_exits_with_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("experiment.json");
    std::fs::write(&config, r#"{"runs_per_part": 0}"#).unwrap();
    let out = ecgpipe().args(["run", "--config"]).arg(&config).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("runs_per_part"));

    std::fs::write(&config, r#"{"unknown_key": 1}"#).unwrap();
    let out = ecgpipe().args(["run", "--config"]).arg(&config).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn publish_to_absent_broker_fails() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("ecg.csv");
    ok(ecgpipe()
        .args(["gen", "--duration-s", "1", "--out"])
        .arg(&csv)
        .output()
        .unwrap());
    let out = ecgpipe()
        .args(["publish", "--broker", "127.0.0.1:1", "--in"])
        .arg(&csv)
        .arg("--send-log")
        .arg(dir.path().join("send.jsonl"))
        .output()
        .unwrap();
    assert!(!out.status.success());
}
