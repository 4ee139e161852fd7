use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const TINY: &str = r#"{
  "seed": 3,
  "model": {"embed_dim": 3, "hidden": 3, "reduced": 2, "visual_dim": 4},
  "optimizer": {"epochs": 3},
  "sampler": {"p": 2, "k": 2},
  "eval": {"rerank": {"k1": 4, "k2": 2}},
  "data": {"synthetic": {"identities": 4, "observations": 4, "cameras": 2, "attributes": 3, "eval_observations": 4}}
}"#;

fn hornet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hornet"))
        .args(args)
        .output()
        .expect("run hornet")
}

fn ok(args: &[&str]) -> String {
    let out = hornet(args);
    assert!(
        out.status.success(),
        "hornet {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("config.json");
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn train_eval_rerank_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), TINY);
    let run = dir.path().join("run");
    let printed: Value =
        serde_json::from_str(&ok(&["train", "--config", &config, "--out", s(&run)])).unwrap();
    for f in [
        "checkpoint.json",
        "loss_trace.csv",
        "metrics.json",
        "gates.json",
    ] {
        assert!(run.join(f).exists(), "missing {f}");
    }
    let trace = fs::read_to_string(run.join("loss_trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 4);

    // Evaluating the checkpoint on its own synthetic split reproduces training's report.
    let ck = run.join("checkpoint.json");
    let report = dir.path().join("report.json");
    let eval: Value = serde_json::from_str(&ok(&[
        "eval",
        "--checkpoint",
        s(&ck),
        "--synthetic",
        "--dump",
        s(&report),
    ]))
    .unwrap();
    assert_eq!(eval["metrics"], printed["metrics"]);
    assert_eq!(eval["gates"], printed["gates"]);

    let rr: Value = serde_json::from_str(&ok(&[
        "rerank",
        "--report",
        s(&report),
        "--k1",
        "4",
        "--k2",
        "2",
        "--lambda",
        "1",
    ]))
    .unwrap();
    assert_eq!(rr["original"], eval["metrics"]);
    assert_eq!(rr["reranked"], rr["original"]);
}

#[test]
fn generated_data_feeds_file_backed_runs() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let config = write_config(dir.path(), TINY);
    ok(&[
        "gen-data",
        "--out",
        s(&data),
        "--ids",
        "4",
        "--obs",
        "4",
        "--config",
        &config,
    ]);
    let features = fs::read_to_string(data.join("features.jsonl")).unwrap();
    assert_eq!(features.lines().count(), 16);

    let files = format!(
        r#"{{"model": {{"embed_dim": 3, "hidden": 3, "reduced": 2, "visual_dim": 4}},
            "optimizer": {{"epochs": 2}}, "sampler": {{"p": 2, "k": 2}},
            "data": {{"files": {{"features": "{}", "captions": "{}"}}}}}}"#,
        s(&data.join("features.jsonl")),
        s(&data.join("captions.jsonl"))
    );
    let config = write_config(dir.path(), &files);
    let run = dir.path().join("run");
    ok(&["train", "--config", &config, "--out", s(&run)]);
    let out = dir.path().join("metrics.json");
    ok(&[
        "eval",
        "--checkpoint",
        s(&run.join("checkpoint.json")),
        "--data",
        s(&data),
        "--out",
        s(&out),
    ]);
    let metrics: Value = serde_json::from_str(&fs::read_to_string(out).unwrap()).unwrap();
    assert!(metrics["mAP"].as_f64().is_some());
}

#[test]
fn gradcheck_reports_trials() {
    let text = ok(&["gradcheck", "--trials", "3", "--seed", "5"]);
    assert!(text.contains("3 trials, 0 failed"), "{text}");
    // An impossible tolerance turns into a failing exit status.
    let out = hornet(&["gradcheck", "--trials", "2", "--tolerance", "0"]);
    assert!(!out.status.success());
}

#[test]
fn ablation_writes_five_rows() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), TINY);
    let out = dir.path().join("table.json");
    let text = ok(&[
        "ablate",
        "--config",
        &config,
        "--epochs",
        "2",
        "--out",
        s(&out),
    ]);
    assert!(text.contains("ID+Triplet+HorNet") && text.contains("+Rerank"));
    let table: Value = serde_json::from_str(&fs::read_to_string(out).unwrap()).unwrap();
    assert_eq!(table["rows"].as_array().unwrap().len(), 5);
}

#[test]
fn divergence_saves_the_last_finite_state() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), TINY);
    let run = dir.path().join("run");
    let out = hornet(&[
        "train",
        "--config",
        &config,
        "--out",
        s(&run),
        "--learning-rate",
        "1e300",
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("diverged"));
    assert!(run.join("diverged_checkpoint.json").exists());
    assert!(!run.join("checkpoint.json").exists());
}

#[test]
fn ablation_rejects_rerank_larger_than_gallery_up_front() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &TINY.replace(r#""k1": 4"#, r#""k1": 20"#));
    let out = hornet(&["ablate", "--config", &config, "--epochs", "200"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("gallery size"));
}

#[test]
fn bad_inputs_fail_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), r#"{"optimizer": {"epochs": 0}, "bogus": 1}"#);
    let out = hornet(&["train", "--config", &config]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));

    let out = hornet(&[
        "eval",
        "--checkpoint",
        "/nonexistent/ck.json",
        "--synthetic",
    ]);
    assert!(!out.status.success());
    let out = hornet(&["eval", "--checkpoint", "ck.json"]);
    assert!(!out.status.success(), "a data source is required");
}
