//! Shared fixtures for CLI integration tests: scripted-backend rule
//! builders, config scaffolding, and binary invocation.

#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_redraft")
}

pub fn run_in(dir: &Path, args: &[&str]) -> Output {
    Command::new(bin())
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

pub fn stdout_of(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).into_owned()
}

pub fn stderr_of(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).into_owned()
}

pub fn assert_ok(output: &Output) {
    assert!(
        output.status.success(),
        "command failed\nstdout: {}\nstderr: {}",
        stdout_of(output),
        stderr_of(output)
    );
}

pub fn write_file(dir: &Path, name: &str, content: &str) -> PathBuf {
    let path = dir.join(name);
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).unwrap();
    }
    std::fs::write(&path, content).unwrap();
    path
}

/// Config with both roles scripted from `script.json`, everything else
/// default.
pub const SCRIPTED_CONFIG: &str = r#"
[backend.writer]
type = "scripted"
script = "script.json"

[backend.judge]
type = "scripted"
script = "script.json"

[paths]
input = "input.jsonl"
output = "out"
checkpoint_dir = "out/ckpt"
"#;

/// Builder for content-keyed script files.
#[derive(Default)]
pub struct Rules {
    rules: Vec<serde_json::Value>,
}

impl Rules {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn judge(&mut self, contains: &[&str], reply: &str) -> &mut Self {
        self.rules.push(serde_json::json!({
            "role": "judge",
            "contains": contains,
            "reply": reply,
        }));
        self
    }

    pub fn writer(&mut self, contains: &[&str], reply: &str) -> &mut Self {
        self.rules.push(serde_json::json!({
            "role": "writer",
            "contains": contains,
            "reply": reply,
        }));
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::json!({ "rules": self.rules }).to_string()
    }
}

pub fn query_line(id: &str, text: &str) -> String {
    serde_json::json!({
        "id": id,
        "text": text,
        "task_kind": "creative",
        "category": "fixture",
    })
    .to_string()
}

pub fn rubrics_reply(marker: &str, n: usize) -> String {
    let entries: Vec<serde_json::Value> = (1..=n)
        .map(|i| {
            serde_json::json!({
                "id": i,
                "key_point": format!("key point {i} for {marker}"),
                "score_standards": "Fully correct: +1. Partially correct: +0.5. Missing: 0.",
            })
        })
        .collect();
    serde_json::json!({ "rubrics": entries }).to_string()
}

pub fn criteria_reply(n: usize) -> String {
    let entries: Vec<serde_json::Value> = (1..=n)
        .map(|i| {
            serde_json::json!({
                "name": format!("Criterion{i}"),
                "description": "A strong answer should: 1) hold up.",
            })
        })
        .collect();
    serde_json::json!({ "EVAL_CRITERIA": entries }).to_string()
}

pub fn kp_score_reply(scores: &[f64], feedback: &str) -> String {
    let entries: Vec<serde_json::Value> = scores
        .iter()
        .enumerate()
        .map(|(i, s)| serde_json::json!({ "id": i + 1, "score": s }))
        .collect();
    serde_json::json!({ "scores": entries, "feedback": feedback }).to_string()
}

pub fn quality_score_reply(scores: &[f64], feedback: &str) -> String {
    let entries: Vec<serde_json::Value> = scores
        .iter()
        .enumerate()
        .map(|(i, s)| serde_json::json!({ "name": format!("Criterion{}", i + 1), "score": s }))
        .collect();
    serde_json::json!({ "scores": entries, "feedback": feedback }).to_string()
}

pub fn verifications_reply(k: usize) -> String {
    let entries: Vec<serde_json::Value> = (1..=k)
        .map(|i| serde_json::json!({ "id": i, "content": format!("Wait, issue {i}.") }))
        .collect();
    serde_json::json!({ "verifications": entries, "total_count": k }).to_string()
}

pub fn judgments_reply(dims: &[(i64, i64, i64)]) -> String {
    let entries: Vec<serde_json::Value> = dims
        .iter()
        .enumerate()
        .map(|(i, (find, rev, align))| {
            serde_json::json!({
                "id": i + 1,
                "issue_validity": find,
                "revision_quality": rev,
                "implementation": align,
            })
        })
        .collect();
    serde_json::json!({ "judgments": entries }).to_string()
}

/// Scripted rules for one query that sails through every stage: rubric
/// generation (5 key points, 6 criteria), a first draft meeting both targets,
/// and reward calls (verdict, one passing segment).
pub fn happy_path_rules(rules: &mut Rules, marker: &str, verdict: &str) {
    rules.judge(
        &[marker, "creating precise scoring rubrics"],
        &rubrics_reply(marker, 5),
    );
    rules.judge(
        &[marker, "generate appropriate evaluation criteria"],
        &criteria_reply(6),
    );
    rules.judge(
        &[marker, "[Evaluation Rubrics]"],
        &kp_score_reply(&[1.0; 5], "all key points covered"),
    );
    rules.judge(
        &[marker, "[Evaluation Criteria]"],
        &quality_score_reply(&[8.0; 6], "clean quality"),
    );
    rules.writer(
        &[marker],
        &format!("<think>plan {marker}</think>answer {marker}"),
    );
    rules.judge(&[marker, "identify and extract"], &verifications_reply(1));
    rules.judge(
        &[marker, "three-dimensional scoring"],
        &judgments_reply(&[(1, 1, 1)]),
    );
    rules.judge(&[marker, "impartial judge"], verdict);
}

/// Poll an HTTP endpoint until it answers or the budget runs out.
pub fn wait_for_http(url: &str, tries: u32) -> bool {
    for _ in 0..tries {
        if ureq::get(url).call().is_ok() {
            return true;
        }
        std::thread::sleep(std::time::Duration::from_millis(100));
    }
    false
}

/// Kills the child process on drop so failed tests do not leak servers.
pub struct ChildGuard(pub std::process::Child);

impl Drop for ChildGuard {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

pub fn free_port() -> u16 {
    std::net::TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port()
}
