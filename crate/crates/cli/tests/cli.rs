use std::path::Path;
use std::process::{Command, Output};

fn anticipate(args: &[&str], env_out: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_anticipate"));
    cmd.args(args).env_remove("ANTICIPATE_OUT");
    if let Some(dir) = env_out {
        cmd.env("ANTICIPATE_OUT", dir);
    }
    cmd.output().expect("binary runs")
}

fn error_record(out: &Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().last().expect("an error line");
    serde_json::from_str(line).unwrap_or_else(|e| panic!("{e}: {text}"))
}

fn write_config(dir: &Path) -> String {
    let path = dir.join("tiny.toml");
    std::fs::write(
        &path,
        "world = \"builtin:reach\"\nseeds = [0]\n\n[demos]\ncount = 10\n\n[train]\nepisodes = 60\n\n[eval]\nepisodes = 5\n",
    )
    .unwrap();
    path.display().to_string()
}

#[test]
fn missing_config_is_a_config_error() {
    let out = anticipate(&["gen-demos"], None);
    assert_eq!(out.status.code(), Some(2));
    let rec = error_record(&out);
    assert_eq!(rec["status"], "error");
    assert_eq!(rec["kind"], "config");
    assert_eq!(rec["command"], "gen-demos");
}

#[test]
fn bad_override_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out = anticipate(&["gen-demos", "--config", &cfg, "--override", "train.episodez=3"], Some(dir.path()));
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_record(&out)["field"], "train.episodez");
}

#[test]
fn out_of_order_command_names_its_prerequisite() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out = anticipate(&["train-planner", "--config", &cfg], Some(dir.path()));
    assert_eq!(out.status.code(), Some(1));
    let rec = error_record(&out);
    assert_eq!(rec["kind"], "missing-artifact");
    assert_eq!(rec["requires"], "build-dataset");
}

#[test]
fn chain_writes_artifacts_under_the_env_root() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    for cmd in ["gen-demos", "build-dataset", "train-planner", "eval-planner", "train-policy", "evaluate"] {
        let out = anticipate(&[cmd, "--config", &cfg, "--seeds", "0,1"], Some(dir.path()));
        assert!(out.status.success(), "{cmd}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let run = dir.path().join("tiny");
    let eval = std::fs::read_to_string(run.join("eval.jsonl")).unwrap();
    assert_eq!(eval.lines().count(), 3);
    for f in ["demos.jsonl", "dataset.jsonl", "planner.json", "planner_accuracy.json", "policy/seed_1.tsv"] {
        assert!(run.join(f).exists(), "{f}");
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run.join("manifest/evaluate.json")).unwrap()).unwrap();
    assert_eq!(manifest["seeds"], serde_json::json!([0, 1]));
    assert!(manifest["wall_time_s"].as_f64().unwrap() >= 0.0);

    // --out wins over the env root; a changed pipeline section is refused
    let out = anticipate(
        &["train-planner", "--config", &cfg, "--override", "pipeline.motion_threshold=9.0", "--out", run.to_str().unwrap()],
        None,
    );
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_record(&out)["kind"], "hash-mismatch");
}
