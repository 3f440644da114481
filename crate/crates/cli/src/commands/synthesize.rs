//! Trajectory synthesis for every curated query, checkpointed per item and
//! resumable without changing the final bytes.

use std::collections::HashMap;
use std::io::Write;

use anyhow::{bail, Result};
use futures::stream::{self, StreamExt};
use serde::{Deserialize, Serialize};

use redraft_core::backend::ChatBackend;
use redraft_core::corpus::Query;
use redraft_core::rubric::RubricSet;
use redraft_core::synthesis::{synthesize, StopReason, SynthesisConfig, Turn};

use crate::checkpoint::{Checkpoint, Stage};
use crate::commands::rubrics::RubricRecord;
use crate::commands::StageOutcome;
use crate::config::LoadedConfig;
use crate::jsonl::{read_jsonl, JsonlWriter, RunMeta};

/// One trajectory output line.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub query_id: String,
    pub sample: String,
    pub final_answer: String,
    pub turns: Vec<Turn>,
    pub rejected_count: u32,
    pub stop_reason: Option<StopReason>,
    pub rubric_checksum: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

async fn synthesize_one(
    query: &Query,
    rubrics: Option<&RubricSet>,
    config: &SynthesisConfig,
    backend: &dyn ChatBackend,
) -> TrajectoryRecord {
    let mut record = TrajectoryRecord {
        query_id: query.id.clone(),
        sample: String::new(),
        final_answer: String::new(),
        turns: Vec::new(),
        rejected_count: 0,
        stop_reason: None,
        rubric_checksum: String::new(),
        error: None,
    };
    let Some(rubrics) = rubrics else {
        record.error = Some("no rubrics for this query; run `rubrics` first".into());
        return record;
    };
    record.rubric_checksum = rubrics.checksum();
    match synthesize(query, rubrics, config, backend).await {
        Ok(trajectory) => {
            record.sample = trajectory.sample;
            record.final_answer = trajectory.final_answer;
            record.turns = trajectory.turns;
            record.rejected_count = trajectory.rejected_count;
            record.stop_reason = Some(trajectory.stop_reason);
        }
        Err(e) => record.error = Some(e.to_string()),
    }
    record
}

// Samples export is plain text, one sample per line with literal newlines
// escaped; SFT tooling that wants raw text can unescape \n and \\.
fn escape_sample(sample: &str) -> String {
    sample.replace('\\', "\\\\").replace('\n', "\\n")
}

pub async fn run(
    loaded: &LoadedConfig,
    meta: &RunMeta,
    resume: bool,
    limit: Option<usize>,
) -> Result<StageOutcome> {
    let output_dir = loaded.output_dir();
    let corpus_path = output_dir.join("curated.jsonl");
    let rubrics_path = output_dir.join("rubrics.jsonl");
    if !corpus_path.exists() {
        bail!("missing {}; run `curate` first", corpus_path.display());
    }
    if !rubrics_path.exists() {
        bail!("missing {}; run `rubrics` first", rubrics_path.display());
    }
    let queries: Vec<Query> = read_jsonl(&corpus_path)?;
    let rubric_records: Vec<RubricRecord> = read_jsonl(&rubrics_path)?;
    let rubric_sets: HashMap<String, RubricSet> = rubric_records
        .iter()
        .filter_map(|r| r.to_set().map(|set| (r.query_id.clone(), set)))
        .collect();

    let checksum = loaded.config.semantic_checksum();
    let mut checkpoint = Checkpoint::open(
        &loaded.checkpoint_dir(),
        Stage::Synthesize,
        &checksum,
        resume,
    )?;
    let trajectories_path = output_dir.join("trajectories.jsonl");
    let written = crate::commands::keys_in_output(&trajectories_path, "query_id")?;
    let mut writer = JsonlWriter::open(&trajectories_path, meta, resume)?;
    let samples_path = output_dir.join("samples.txt");
    let mut samples = open_samples(&samples_path, resume)?;

    let backend = loaded.build_backend()?;
    let config = loaded.config.synthesis_config();
    let mut pending: Vec<&Query> = queries
        .iter()
        .filter(|q| !checkpoint.is_done(&q.id) && !written.contains(&q.id))
        .collect();
    if let Some(limit) = limit {
        pending.truncate(limit);
    }
    let width = loaded.config.backend.writer.max_in_flight.max(1);

    let mut item_errors = 0;
    let mut processed = 0;
    let backend_ref: &dyn ChatBackend = backend.as_ref();
    let config_ref = &config;
    let rubric_sets_ref = &rubric_sets;
    let mut results = stream::iter(pending)
        .map(|query| async move {
            synthesize_one(
                query,
                rubric_sets_ref.get(&query.id),
                config_ref,
                backend_ref,
            )
            .await
        })
        .buffered(width);
    while let Some(record) = results.next().await {
        let failed = record.error.is_some() || record.stop_reason == Some(StopReason::JudgeFailure);
        if failed {
            item_errors += 1;
            eprintln!(
                "synthesize: {}: {}",
                record.query_id,
                record.error.as_deref().unwrap_or("judge failure")
            );
        }
        // Samples first: the trajectory line is what resume consults, so it
        // must land only once both files hold the item.
        writeln!(samples, "{}", escape_sample(&record.sample))?;
        samples.flush()?;
        writer.write_line(&record)?;
        checkpoint.mark_done(&record.query_id)?;
        processed += 1;
    }

    Ok(StageOutcome::new(
        processed,
        item_errors,
        format!(
            "synthesize: {processed} trajectories ({} already done) -> {}",
            checkpoint.completed_count() - processed,
            trajectories_path.display()
        ),
    ))
}

fn open_samples(path: &std::path::Path, resume: bool) -> Result<std::fs::File> {
    if path.exists() && !resume {
        bail!(
            "output {} already exists; pass --resume to continue or delete it",
            path.display()
        );
    }
    Ok(std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)?)
}
