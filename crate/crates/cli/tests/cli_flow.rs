//! End-to-end CLI behavior: curation stats, usage guards, resume guards,
//! the HTTP service's validation, and report shapes.

mod common;

use common::*;

fn long_text(marker: &str, filler: &str) -> String {
    format!("{marker} {filler} with enough distinct words to pass the ten token length filter")
}

// Eleven tokens, all suffixed with the index, so no pair of fixture queries
// comes anywhere near the dedup threshold.
fn disjoint_text(marker: &str, i: usize) -> String {
    format!(
        "{marker} topic{i} alpha{i} beta{i} gamma{i} delta{i} epsilon{i} zeta{i} eta{i} theta{i} iota{i}"
    )
}

#[test]
fn curate_reports_duplicate_drops() {
    let dir = tempfile::tempdir().unwrap();
    let mut lines = Vec::new();
    for i in 0..17 {
        lines.push(query_line(
            &format!("q{i:02}"),
            &long_text(
                &format!("UNIQ-{i}"),
                &format!("subject number {i} alpha beta"),
            ),
        ));
    }
    // Three exact copies of existing queries under fresh ids.
    for (i, source) in [0usize, 3, 7].iter().enumerate() {
        lines.push(query_line(
            &format!("dup{i}"),
            &long_text(
                &format!("UNIQ-{source}"),
                &format!("subject number {source} alpha beta"),
            ),
        ));
    }
    write_file(dir.path(), "input.jsonl", &(lines.join("\n") + "\n"));
    write_file(dir.path(), "config.toml", SCRIPTED_CONFIG);
    write_file(dir.path(), "script.json", &Rules::new().to_json());

    let output = run_in(dir.path(), &["--config", "config.toml", "curate"]);
    assert_ok(&output);
    let stats: serde_json::Value =
        serde_json::from_str(stdout_of(&output).lines().next().unwrap()).unwrap();
    assert_eq!(stats["input_count"], 20);
    assert_eq!(stats["dup_dropped"], 3);
    assert_eq!(stats["output_count"], 17);
}

#[test]
fn top_k_without_difficulty_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    write_file(
        dir.path(),
        "input.jsonl",
        &query_line("q1", &long_text("A", "b")),
    );
    write_file(dir.path(), "config.toml", SCRIPTED_CONFIG);
    write_file(dir.path(), "script.json", &Rules::new().to_json());

    let output = run_in(
        dir.path(),
        &["--config", "config.toml", "curate", "--top-k", "5"],
    );
    assert!(!output.status.success());
    assert!(
        stderr_of(&output).contains("difficulty"),
        "{}",
        stderr_of(&output)
    );
}

#[test]
fn empty_input_yields_zero_stats_and_success() {
    let dir = tempfile::tempdir().unwrap();
    write_file(dir.path(), "input.jsonl", "");
    write_file(dir.path(), "config.toml", SCRIPTED_CONFIG);
    write_file(dir.path(), "script.json", &Rules::new().to_json());

    let output = run_in(dir.path(), &["--config", "config.toml", "curate"]);
    assert_ok(&output);
    let stats: serde_json::Value =
        serde_json::from_str(stdout_of(&output).lines().next().unwrap()).unwrap();
    assert_eq!(stats["input_count"], 0);
    assert_eq!(stats["output_count"], 0);
    assert!(dir.path().join("out/curated.jsonl").exists());
}

#[test]
fn difficulty_ranking_orders_and_prunes_the_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let lines: Vec<String> = (0..4)
        .map(|i| query_line(&format!("q{i}"), &disjoint_text(&format!("RANK-{i}"), i)))
        .collect();
    write_file(dir.path(), "input.jsonl", &(lines.join("\n") + "\n"));
    let difficulty = [
        r#"{"query_id":"q0","s_ref":1.0,"s_model":0.7,"gap":0.30000000000000004}"#,
        r#"{"query_id":"q1","s_ref":1.0,"s_model":0.9,"gap":0.09999999999999998}"#,
        r#"{"query_id":"q2","s_ref":1.5,"s_model":1.0,"gap":0.5}"#,
        r#"{"query_id":"q3","s_ref":1.0,"s_model":1.0,"gap":0.0}"#,
    ];
    write_file(
        dir.path(),
        "difficulty.jsonl",
        &(difficulty.join("\n") + "\n"),
    );
    write_file(dir.path(), "config.toml", SCRIPTED_CONFIG);
    write_file(dir.path(), "script.json", &Rules::new().to_json());

    let output = run_in(
        dir.path(),
        &[
            "--config",
            "config.toml",
            "curate",
            "--difficulty",
            "difficulty.jsonl",
            "--top-k",
            "2",
        ],
    );
    assert_ok(&output);
    let curated = std::fs::read_to_string(dir.path().join("out/curated.jsonl")).unwrap();
    let ids: Vec<String> = curated
        .lines()
        .skip(1)
        .map(|l| {
            serde_json::from_str::<serde_json::Value>(l).unwrap()["id"]
                .as_str()
                .unwrap()
                .to_owned()
        })
        .collect();
    assert_eq!(ids, vec!["q2", "q0"]);
}

fn write_happy_fixture(dir: &std::path::Path, n: usize) {
    let lines: Vec<String> = (0..n)
        .map(|i| {
            query_line(
                &format!("q{i:02}"),
                &disjoint_text(&format!("ITEM-{i:02}"), i),
            )
        })
        .collect();
    write_file(dir, "input.jsonl", &(lines.join("\n") + "\n"));
    let mut rules = Rules::new();
    for i in 0..n {
        happy_path_rules(&mut rules, &format!("ITEM-{i:02}"), "[[C]]");
    }
    write_file(dir, "script.json", &rules.to_json());
    write_file(dir, "config.toml", SCRIPTED_CONFIG);
}

#[test]
fn stale_checkpoint_without_resume_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    write_happy_fixture(dir.path(), 2);
    assert_ok(&run_in(dir.path(), &["--config", "config.toml", "curate"]));
    assert_ok(&run_in(dir.path(), &["--config", "config.toml", "rubrics"]));
    assert_ok(&run_in(
        dir.path(),
        &["--config", "config.toml", "synthesize", "--limit", "1"],
    ));

    let output = run_in(dir.path(), &["--config", "config.toml", "synthesize"]);
    assert!(!output.status.success());
    assert!(
        stderr_of(&output).contains("--resume"),
        "{}",
        stderr_of(&output)
    );
}

#[test]
fn config_change_refuses_resume() {
    let dir = tempfile::tempdir().unwrap();
    write_happy_fixture(dir.path(), 2);
    assert_ok(&run_in(dir.path(), &["--config", "config.toml", "curate"]));
    assert_ok(&run_in(dir.path(), &["--config", "config.toml", "rubrics"]));
    assert_ok(&run_in(
        dir.path(),
        &["--config", "config.toml", "synthesize", "--limit", "1"],
    ));

    // A semantic change (alpha) invalidates the checkpoint...
    let config = std::fs::read_to_string(dir.path().join("config.toml")).unwrap();
    write_file(
        dir.path(),
        "config.toml",
        &format!("{config}\n[reward]\nalpha = 0.5\n"),
    );
    let output = run_in(
        dir.path(),
        &["--config", "config.toml", "synthesize", "--resume"],
    );
    assert!(!output.status.success());
    assert!(
        stderr_of(&output).contains("config changed"),
        "{}",
        stderr_of(&output)
    );

    // ...while a transport-only change resumes fine.
    write_file(
        dir.path(),
        "config.toml",
        &format!("{config}\n[backend.judge.retry]\nmax_attempts = 9\n"),
    );
    let output = run_in(
        dir.path(),
        &["--config", "config.toml", "synthesize", "--resume"],
    );
    assert_ok(&output);
}

#[test]
fn serve_mode_validates_bodies_and_reports_health() {
    let dir = tempfile::tempdir().unwrap();
    write_happy_fixture(dir.path(), 1);
    let port = free_port();
    let addr = format!("127.0.0.1:{port}");
    let child = std::process::Command::new(bin())
        .current_dir(dir.path())
        .args([
            "--config",
            "config.toml",
            "reward",
            "--serve",
            "--addr",
            &addr,
        ])
        .spawn()
        .unwrap();
    let _guard = ChildGuard(child);
    assert!(
        wait_for_http(&format!("http://{addr}/healthz"), 50),
        "service never came up"
    );

    let mut health = ureq::get(format!("http://{addr}/healthz")).call().unwrap();
    let health: serde_json::Value =
        serde_json::from_str(&health.body_mut().read_to_string().unwrap()).unwrap();
    assert_eq!(health["status"], "ok");
    assert!(health["version"].as_str().is_some());
    assert!(health["config_checksum"].as_str().is_some());

    // Malformed body: 400 naming the offending field.
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .http_status_as_error(false)
        .build()
        .into();
    let mut response = agent
        .post(format!("http://{addr}/v1/reward"))
        .content_type("application/json")
        .send(r#"{"sample": 42}"#)
        .unwrap();
    assert_eq!(response.status(), 400);
    let body: serde_json::Value =
        serde_json::from_str(&response.body_mut().read_to_string().unwrap()).unwrap();
    let message = body["error"].as_str().unwrap();
    assert!(message.contains("sample"), "{message}");
}

#[test]
fn bench_prints_scores_and_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    write_file(dir.path(), "config.toml", SCRIPTED_CONFIG);
    write_file(dir.path(), "input.jsonl", "");
    let mut rules = Rules::new();
    for (i, (k, passing)) in [(2usize, 2usize), (1, 0), (0, 0)].iter().enumerate() {
        let marker = format!("BENCH-{i}");
        rules.judge(&[&marker, "identify and extract"], &verifications_reply(*k));
        if *k > 0 {
            let dims: Vec<(i64, i64, i64)> = (0..*k)
                .map(|j| {
                    if j < *passing {
                        (1, 1, 1)
                    } else {
                        (-1, -1, -1)
                    }
                })
                .collect();
            rules.judge(
                &[&marker, "three-dimensional scoring"],
                &judgments_reply(&dims),
            );
        }
    }
    write_file(dir.path(), "script.json", &rules.to_json());

    let items: Vec<String> = (0..3)
        .map(|i| {
            serde_json::json!({
                "item_id": format!("i{i}"),
                "query": {"id": format!("q{i}"), "text": format!("BENCH-{i} task"), "task_kind": "creative", "category": "c"},
                "sample": format!("<think>BENCH-{i} thinking</think><answer>answer</answer>"),
                "rubrics": {"query_id": format!("q{i}"), "key_points": [{"id": 1, "key_point": "p", "score_standards": "s"}], "quality": [{"name": "C", "description": "d"}]},
            })
            .to_string()
        })
        .collect();
    write_file(dir.path(), "bench.jsonl", &(items.join("\n") + "\n"));

    let output = run_in(
        dir.path(),
        &["--config", "config.toml", "bench", "--input", "bench.jsonl"],
    );
    assert_ok(&output);
    let stdout = stdout_of(&output);
    assert!(stdout.contains("micro_score=0.666667"), "{stdout}");
    assert!(stdout.contains("macro_score=0.500000"), "{stdout}");
    assert!(stdout.contains("items_without_segments=1"), "{stdout}");
    let report: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("out/bench_report.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(report["per_item"].as_array().unwrap().len(), 3);
    assert!(report["meta"]["prompt_checksum"].as_str().is_some());
}

#[test]
fn patterns_emits_csv_with_five_kind_rows() {
    let dir = tempfile::tempdir().unwrap();
    write_file(dir.path(), "config.toml", SCRIPTED_CONFIG);
    write_file(dir.path(), "input.jsonl", "");
    let section = |yes: usize, no: usize| {
        let instances: Vec<serde_json::Value> = (0..yes + no)
            .map(|j| {
                serde_json::json!({
                    "id": j + 1,
                    "content": format!("instance {j}"),
                    "contribution": if j < yes { "yes" } else { "no" },
                })
            })
            .collect();
        serde_json::json!({"instances": instances, "count": yes + no})
    };
    let reply = |av: (usize, usize)| {
        serde_json::json!({
            "answer_verification": section(av.0, av.1),
            "backtracking": section(0, 0),
            "subgoal_setting": section(1, 0),
            "backward_chaining": section(0, 0),
            "summarization": section(0, 0),
        })
        .to_string()
    };
    let mut rules = Rules::new();
    rules.judge(&["TRACE-0"], &reply((2, 1)));
    rules.judge(&["TRACE-1"], &reply((1, 0)));
    write_file(dir.path(), "script.json", &rules.to_json());

    let traces: Vec<String> = (0..2)
        .map(|i| {
            serde_json::json!({
                "trace_id": format!("t{i}"),
                "question": format!("TRACE-{i} question"),
                "reasoning": "step one, then step two",
                "truth_or_rubrics": {"kind": "rubrics", "text": "some rubrics"},
            })
            .to_string()
        })
        .collect();
    write_file(dir.path(), "traces.jsonl", &(traces.join("\n") + "\n"));

    let output = run_in(
        dir.path(),
        &[
            "--config",
            "config.toml",
            "patterns",
            "--input",
            "traces.jsonl",
        ],
    );
    assert_ok(&output);
    let csv = std::fs::read_to_string(dir.path().join("out/patterns.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 6);
    assert_eq!(lines[0], "kind,share,helpful");
    assert!(lines[1].starts_with("answer_verification,"));
    // av: 3 yes+1 no of 6 total -> share 0.6666..., helpful 0.75.
    assert!(lines[1].contains("0.75"), "{csv}");
}

#[test]
fn reward_requires_a_mode() {
    let dir = tempfile::tempdir().unwrap();
    write_happy_fixture(dir.path(), 1);
    let output = run_in(dir.path(), &["--config", "config.toml", "reward"]);
    assert!(!output.status.success());
    assert!(
        stderr_of(&output).contains("--batch"),
        "{}",
        stderr_of(&output)
    );
}

#[test]
fn unknown_subcommand_prints_usage_and_fails() {
    let dir = tempfile::tempdir().unwrap();
    let output = run_in(dir.path(), &["frobnicate"]);
    assert!(!output.status.success());
    let stderr = stderr_of(&output);
    assert!(stderr.to_lowercase().contains("usage"), "{stderr}");
}

#[test]
fn missing_config_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let output = run_in(dir.path(), &["curate"]);
    assert!(!output.status.success());
    assert!(
        stderr_of(&output).contains("--config"),
        "{}",
        stderr_of(&output)
    );
}
