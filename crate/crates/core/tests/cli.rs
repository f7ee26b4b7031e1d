use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_jsdwatch");

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().unwrap()
}

fn path(dir: &Path, name: &str) -> PathBuf {
    dir.join(name)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Small synthetic cohort plus a reference built from it.
fn fixture() -> (TempDir, PathBuf, PathBuf) {
    let dir = TempDir::new().unwrap();
    let obs = path(dir.path(), "obs.csv");
    let model = path(dir.path(), "model.json");
    let out = run(&["synth", "--control", "12", "--treatment", "3", "--seed", "4", "--out", s(&obs)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = run(&["build-reference", "--in", s(&obs), "--out", s(&model)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    (dir, obs, model)
}

#[test]
fn usage_and_data_errors_have_distinct_exit_codes() {
    assert_eq!(run(&["score", "--bogus"]).status.code(), Some(2));
    assert_eq!(run(&[]).status.code(), Some(2));
    let dir = TempDir::new().unwrap();
    let missing = path(dir.path(), "nope.json");
    let out = run(&["score", "--model", s(&missing), "--in", s(&missing)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!out.stderr.is_empty());
}

#[test]
fn synth_is_deterministic_and_defaults_to_stdout() {
    let a = run(&["synth", "--control", "3", "--treatment", "2", "--seed", "9"]);
    let b = run(&["synth", "--control", "3", "--treatment", "2", "--seed", "9"]);
    let c = run(&["synth", "--control", "3", "--treatment", "2", "--seed", "10"]);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    assert_ne!(a.stdout, c.stdout);
    let text = String::from_utf8(a.stdout).unwrap();
    assert!(text.starts_with("patient_id,hour,feature,value,cohort"));
    assert_eq!(text.lines().count(), 1 + 5 * 48 * 27);
}

#[test]
fn build_reference_logs_dropped_feature_and_honours_exclusions() {
    let dir = TempDir::new().unwrap();
    let obs = path(dir.path(), "obs.csv");
    let model = path(dir.path(), "model.json");
    assert!(run(&["synth", "--control", "8", "--treatment", "0", "--seed", "2", "--out", s(&obs)]).status.success());
    // thin sodium out to roughly one hour in ten
    let text = fs::read_to_string(&obs).unwrap();
    let kept: Vec<&str> = text
        .lines()
        .enumerate()
        .filter(|(i, l)| !l.contains(",sodium,") || i % 10 == 0)
        .map(|(_, l)| l)
        .collect();
    fs::write(&obs, kept.join("\n") + "\n").unwrap();

    let out = run(&["build-reference", "--in", s(&obs), "--out", s(&model), "--exclude-patient", "ctrl_0000"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let log = String::from_utf8_lossy(&out.stderr);
    assert!(log.contains("sodium") && log.contains("25.0%"), "log: {log}");
    let doc: serde_json::Value = serde_json::from_str(&fs::read_to_string(&model).unwrap()).unwrap();
    let ids: Vec<&str> = doc["features"].as_array().unwrap().iter().map(|f| f["feature_id"].as_str().unwrap()).collect();
    assert_eq!(ids.len(), 26);
    assert!(!ids.contains(&"sodium"));
    assert_eq!(doc["metadata"]["control_patients"], 7);
    assert_eq!(doc["metadata"]["excluded_patients"][0], "ctrl_0000");
}

#[test]
fn score_emits_47_rows_per_dense_patient_and_none_for_one_hour() {
    let (dir, obs, model) = fixture();
    let scores = path(dir.path(), "scores.csv");
    let out = run(&["score", "--model", s(&model), "--in", s(&obs), "--out", s(&scores)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(&scores).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 15 * 47);
    assert!(text.lines().next().unwrap().starts_with("patient_id,hour,comprehensive"));

    let short = path(dir.path(), "short.csv");
    fs::write(&short, "patient_id,hour,feature,value\nsolo,0.5,heart_rate,80\nsolo,0.7,spo2,97\n").unwrap();
    let out = run(&["score", "--model", s(&model), "--in", s(&short), "--horizon", "1"]);
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(out.status.code() == Some(0) || out.status.code() == Some(1));
    assert!(stdout.lines().nth(1).is_none(), "unexpected rows: {stdout}");
}

#[test]
fn unknown_input_feature_fails_unless_ignored() {
    let (dir, _, model) = fixture();
    let odd = path(dir.path(), "odd.csv");
    let mut rows = String::from("patient_id,hour,feature,value\n");
    for h in 0..3 {
        rows += &format!("p,{h},heart_rate,80\np,{h},mystery,1\n");
    }
    fs::write(&odd, rows).unwrap();
    let registry = path(dir.path(), "registry.csv");
    fs::write(&registry, "id,display_name,unit\nheart_rate,Heart rate,bpm\nmystery,Mystery,u\n").unwrap();
    let out = run(&["score", "--model", s(&model), "--in", s(&odd), "--registry", s(&registry)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("mystery"));
    let out = run(&["score", "--model", s(&model), "--in", s(&odd), "--registry", s(&registry), "--ignore-extra-features"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    // hours 1..=3 have data in their window; later windows are empty
    assert_eq!(String::from_utf8(out.stdout).unwrap().lines().count(), 1 + 3);
}

#[test]
fn stream_output_equals_batch_output() {
    let (_dir, obs, model) = fixture();
    let batch = run(&["score", "--model", s(&model), "--in", s(&obs)]);
    assert!(batch.status.success());
    let batch = String::from_utf8(batch.stdout).unwrap();

    let text = fs::read_to_string(&obs).unwrap();
    let mut input = String::new();
    let mut hour = 0;
    for line in text.lines().skip(1).filter(|l| l.starts_with("trt_0001,")) {
        let fields: Vec<&str> = line.split(',').collect();
        let h = fields[1].parse::<f64>().unwrap().floor() as usize;
        if h != hour {
            input += "end-of-hour\n";
            hour = h;
        }
        input += &fields[..4].join(",");
        input += "\n";
    }
    let mut child = Command::new(BIN)
        .args(["stream", "--model", s(&model), "--horizon", "48"])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(input.as_bytes()).unwrap();
    let out = child.wait_with_output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let streamed = String::from_utf8(out.stdout).unwrap();

    let mut lines = streamed.lines();
    assert_eq!(lines.next(), batch.lines().next());
    let expected: Vec<&str> = batch.lines().filter(|l| l.starts_with("trt_0001,")).collect();
    assert_eq!(lines.collect::<Vec<_>>(), expected);
    assert_eq!(expected.len(), 47);
}

#[test]
fn stream_reports_out_of_order_lines_and_keeps_going() {
    let (_dir, _, model) = fixture();
    let input = "a,0,heart_rate,80\na,1,heart_rate,82\na,2,heart_rate,81\nend-of-hour\na,0.5,heart_rate,70\nb,0,heart_rate,90\nb,1,heart_rate,91\nend-of-hour\n";
    let mut child = Command::new(BIN)
        .args(["stream", "--model", s(&model)])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(input.as_bytes()).unwrap();
    let out = child.wait_with_output().unwrap();
    assert!(out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("out of order"), "stderr: {stderr}");
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.lines().any(|l| l.starts_with("a,2,")));
    assert!(stdout.lines().any(|l| l.starts_with("b,1,")));
}

#[test]
fn report_writes_separation_table() {
    let (dir, obs, model) = fixture();
    let scores = path(dir.path(), "scores.csv");
    assert!(run(&["score", "--model", s(&model), "--in", s(&obs), "--out", s(&scores)]).status.success());
    let report = path(dir.path(), "report");
    let out = run(&["report", "--scores", s(&scores), "--labels", s(&obs), "--out", s(&report)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for name in ["score_density.csv", "hourly_summary.csv", "trajectories.csv", "separation.csv"] {
        assert!(report.join(name).exists(), "{name} missing");
    }
}
