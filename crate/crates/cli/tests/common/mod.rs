#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::json;

/// Six reports over two findings with positive and negative classes.
/// Columns: id, text, effusion, pneumonia, canned answer.
pub const SIX: [(&str, &str, i32, i32, &str); 6] = [
    (
        "r1",
        "Small right pleural effusion.",
        1,
        -1,
        r#"{"effusion": 1, "pneumonia": -1}"#,
    ),
    (
        "r2",
        "No effusion. Right lower lobe consolidation, likely pneumonia.",
        2,
        1,
        r#"Here you go: {"effusion": 2, "pneumonia": -1} Hope this helps."#,
    ),
    (
        "r3",
        "Patchy opacity compatible with pneumonia.",
        -1,
        1,
        "```json\n{'effusion': 1, 'pneumonia': '1'}\n```",
    ),
    (
        "r4",
        "Bilateral effusions. No signs of pneumonia.",
        1,
        2,
        r#"{"effusion": 1}"#,
    ),
    (
        "r5",
        "Normal heart size. Clear lungs.",
        -1,
        -1,
        r#"{"effusion": -1, "pneumonia": -1}"#,
    ),
    (
        "r6",
        "Large effusion and multifocal pneumonia.",
        1,
        1,
        "The report is unremarkable.",
    ),
];

pub const FIXTURE_CONFIG: &str = r#"
seed = 42
output_dir = "out"

[[taxonomy]]
dataset_id = "fixture"
findings = ["effusion", "pneumonia"]
mention_classes = ["positive", "negative"]

[[dataset]]
id = "fixture"
path = "reports.jsonl"

[split]
counts = [0, 0, 6]

[endpoint]
kind = "mock"
mode = "canned"
answers = "answers.jsonl"
"#;

/// Writes the six-report dataset, its canned answers and a config into `dir`.
pub fn write_fixture(dir: &Path) -> PathBuf {
    let mut reports = String::new();
    let mut answers = String::new();
    for (id, text, eff, pna, answer) in SIX {
        let line = json!({
            "id": id,
            "language": "en",
            "text": text,
            "labels": {"effusion": eff, "pneumonia": pna},
        });
        reports.push_str(&format!("{line}\n"));
        answers.push_str(&format!("{}\n", json!({"id": id, "answer": answer})));
    }
    fs::write(dir.join("reports.jsonl"), reports).unwrap();
    fs::write(dir.join("answers.jsonl"), answers).unwrap();
    let config = dir.join("radlabel.toml");
    fs::write(&config, FIXTURE_CONFIG).unwrap();
    config
}

pub fn radlabel(config: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_radlabel"))
        .arg("--config")
        .arg(config)
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .expect("binary runs")
}

pub fn read_lines(path: &Path) -> Vec<serde_json::Value> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}
