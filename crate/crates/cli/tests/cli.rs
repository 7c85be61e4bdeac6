use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_llm-nids");

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name)
}

const SELECTION_SCRIPT: &str = r#""7, 8, 9, 21, 45, 5, 4, 13, 50, 30"
"7: very important\n8: very important\n9: kind of important\n21: very important\n45: not very important\n5: very important\n4: kind of important\n13: not very important\n50: kind of important\n30: very important"
"#;

struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    fn new() -> Self {
        let ws = Self {
            dir: tempfile::tempdir().unwrap(),
        };
        ws.write("script.jsonl", &format!("{SELECTION_SCRIPT}{{\"fallback\": \"no\"}}\n"));
        ws
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn write(&self, name: &str, text: &str) -> PathBuf {
        let p = self.path(name);
        fs::write(&p, text).unwrap();
        p
    }

    fn run(&self, args: &[&str]) -> Output {
        Command::new(BIN)
            .args(args)
            .current_dir(self.dir.path())
            .env_remove("OPENAI_API_KEY")
            .output()
            .unwrap()
    }

    fn scripted_config(&self, extra: &str) -> PathBuf {
        let text = format!(
            r#"{{
  "backend": "scripted",
  "script": "script.jsonl",
  "catalog": "{}",
  "datasets": ["{}"],
  "max_scored": 20,
  "output_dir": "out"{extra}
}}"#,
            data("catalog.csv").display(),
            data("sample_flows.csv").display()
        );
        self.write("cfg.json", &text)
    }

    fn json(&self, rel: &str) -> Value {
        serde_json::from_str(&fs::read_to_string(self.path(rel)).unwrap()).unwrap()
    }
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

#[test]
fn default_sweep_with_scripted_stub() {
    let ws = Workspace::new();
    let cfg = ws.scripted_config("");
    let out = ws.run(&["sweep", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let table = fs::read_to_string(ws.path("out/sweep.csv")).unwrap();
    assert_eq!(table.lines().count(), 16);
    assert_eq!(String::from_utf8_lossy(&out.stdout), table);
    let manifest = ws.json("out/manifest.json");
    assert_eq!(manifest["command"], "sweep");
    assert_eq!(manifest["seed"], 42);
    assert_eq!(manifest["exit_code"], 0);
    assert!(manifest["started_at"].as_str().unwrap().ends_with('Z'));
    assert!(manifest["artifacts"].as_array().unwrap().iter().any(|a| a == "selection.json"));
}

#[test]
fn manifest_config_replays_the_run() {
    let ws = Workspace::new();
    let cfg = ws.scripted_config("");
    assert_eq!(code(&ws.run(&["sweep", "--config", cfg.to_str().unwrap()])), 0);
    let manifest = ws.json("out/manifest.json");
    ws.write("replay.json", &manifest["config"].to_string());
    let out = ws.run(&["sweep", "--config", "replay.json", "--out", "again"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for file in ["sweep.csv", "sweep.json", "reports.json", "selection.json"] {
        assert_eq!(
            fs::read(ws.path("out").join(file)).unwrap(),
            fs::read(ws.path("again").join(file)).unwrap(),
            "{file}"
        );
    }
}

#[test]
fn nothing_written_outside_output_dir() {
    let ws = Workspace::new();
    let cfg = ws.scripted_config("");
    assert_eq!(code(&ws.run(&["sweep", "--config", cfg.to_str().unwrap()])), 0);
    let mut entries: Vec<String> = fs::read_dir(ws.dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    entries.sort();
    assert_eq!(entries, ["cfg.json", "out", "script.jsonl"]);
}

#[test]
fn flags_override_config_values() {
    let ws = Workspace::new();
    let cfg = ws.scripted_config(r#", "strategy": "interactive", "n_examples": 2"#);
    let out = ws.run(&[
        "evaluate",
        "--config",
        cfg.to_str().unwrap(),
        "--strategy",
        "illustrative",
        "--examples",
        "10",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let summary: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["strategy"], "illustrative");
    assert_eq!(summary["n_examples"], 10);
    assert_eq!(summary["scored"], 20);
    let manifest = ws.json("out/manifest.json");
    assert_eq!(manifest["config"]["n_examples"], 10);
    assert_eq!(manifest["config"]["max_scored"], 20);
    let report = ws.json("out/report.json");
    assert_eq!(report["example_rows"].as_array().unwrap().len(), 10);
}

#[test]
fn http_without_api_key_is_a_config_error() {
    let ws = Workspace::new();
    let out = ws.run(&[
        "select-features",
        "--catalog",
        data("catalog.csv").to_str().unwrap(),
        "--count",
        "10",
        "--backend",
        "http",
        "--out",
        "out",
    ]);
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("OPENAI_API_KEY"));
}

#[test]
fn unlabeled_dataset_is_an_evaluation_failure() {
    let ws = Workspace::new();
    ws.write("flows.csv", "Flow Duration,Total Fwd Packets\n10,2\n5000,9\n");
    let out = ws.run(&[
        "evaluate",
        "--backend",
        "scripted",
        "--script",
        "script.jsonl",
        "--catalog",
        data("catalog.csv").to_str().unwrap(),
        "--dataset",
        "flows.csv",
        "--features",
        "Flow Duration",
        "--out",
        "out",
    ]);
    assert_eq!(code(&out), 4, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(ws.json("out/manifest.json")["exit_code"], 4);
}

#[test]
fn usage_errors_exit_2() {
    let ws = Workspace::new();
    assert_eq!(code(&ws.run(&["detect"])), 2);
    assert_eq!(code(&ws.run(&["sweep", "--no-such-flag"])), 2);
    assert_eq!(code(&ws.run(&["evaluate", "--strategy", "fancy"])), 2);
    assert_eq!(code(&ws.run(&[])), 2);
    let out = ws.run(&["evaluate", "--workers", "0", "--catalog", data("catalog.csv").to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("--help"));
    assert_eq!(code(&ws.run(&["--help"])), 0);
}

#[test]
fn bad_config_file_exits_3() {
    let ws = Workspace::new();
    ws.write("cfg.json", r#"{"catalgo": "x.csv"}"#);
    assert_eq!(code(&ws.run(&["sweep", "--config", "cfg.json"])), 3);
    assert_eq!(code(&ws.run(&["sweep", "--config", "missing.json"])), 3);
}

#[test]
fn select_features_prints_kept_set() {
    let ws = Workspace::new();
    let out = ws.run(&[
        "select-features",
        "--catalog",
        data("catalog.csv").to_str().unwrap(),
        "--count",
        "10",
        "--backend",
        "scripted",
        "--script",
        "script.jsonl",
        "--out",
        "out",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let printed: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(printed["kept"], serde_json::json!([7, 8, 9, 21, 5, 4, 50, 30]));
    assert_eq!(printed["names"][0], "Flow Duration");
    let calls = fs::read_to_string(ws.path("out/llm_calls.jsonl")).unwrap();
    assert_eq!(calls.lines().count(), 2);
}

#[test]
fn detect_prints_verdict_and_attempts() {
    let ws = Workspace::new();
    ws.write("script.jsonl", "\"Hard to say.\"\n\"Yes, malicious.\"\n");
    let out = ws.run(&[
        "detect",
        "--flow",
        r#"{"Flow Duration": 12, "Total Fwd Packets": 300}"#,
        "--examples",
        data("sample_flows.csv").to_str().unwrap(),
        "--n-examples",
        "4",
        "--strategy",
        "illustrative",
        "--features",
        "Flow Duration,Total Fwd Packets",
        "--catalog",
        data("catalog.csv").to_str().unwrap(),
        "--backend",
        "scripted",
        "--script",
        "script.jsonl",
        "--out",
        "out",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let printed: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(printed, serde_json::json!({"verdict": "malicious", "attempts": 2}));
    let detection = ws.json("out/detection.json");
    assert_eq!(detection["prompt"]["sections"].as_array().unwrap().len(), 4);
}

#[test]
fn detect_rejects_unknown_flow_features() {
    let ws = Workspace::new();
    let out = ws.run(&[
        "detect",
        "--flow",
        r#"{"Bogus": 1}"#,
        "--examples",
        data("sample_flows.csv").to_str().unwrap(),
        "--catalog",
        data("catalog.csv").to_str().unwrap(),
        "--backend",
        "scripted",
        "--script",
        "script.jsonl",
        "--out",
        "out",
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn exhausted_script_is_a_backend_failure() {
    let ws = Workspace::new();
    ws.write("script.jsonl", "\"no\"\n\"yes\"\n");
    let out = ws.run(&[
        "evaluate",
        "--backend",
        "scripted",
        "--script",
        "script.jsonl",
        "--catalog",
        data("catalog.csv").to_str().unwrap(),
        "--dataset",
        data("sample_flows.csv").to_str().unwrap(),
        "--features",
        "Flow Duration",
        "--examples",
        "2",
        "--out",
        "out",
    ]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
    let partial = fs::read_to_string(ws.path("out/flows.jsonl")).unwrap();
    assert_eq!(partial.lines().count(), 2);
}
