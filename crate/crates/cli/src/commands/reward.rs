//! Batch reward scoring, checkpointed per item. The per-line schema is the
//! same one the HTTP service accepts and returns.

use std::collections::HashSet;
use std::path::Path;

use anyhow::{bail, Result};
use futures::stream::{self, StreamExt};

use redraft_core::backend::ChatBackend;
use redraft_core::reward::{reward_one, RewardRequest};

use crate::checkpoint::{Checkpoint, Stage};
use crate::commands::StageOutcome;
use crate::config::LoadedConfig;
use crate::jsonl::{read_jsonl_numbered, JsonlWriter, RunMeta};

/// Completion key: the explicit item id when present, else the query id.
pub fn item_key(request: &RewardRequest) -> String {
    request
        .id
        .clone()
        .unwrap_or_else(|| request.query.id.clone())
}

fn written_reward_keys(path: &Path) -> anyhow::Result<std::collections::HashSet<String>> {
    Ok(crate::jsonl::read_existing_keys(path, |value| {
        value
            .get("id")
            .and_then(|v| v.as_str())
            .or_else(|| value.get("query_id").and_then(|v| v.as_str()))
            .map(String::from)
    })?
    .into_iter()
    .collect())
}

pub async fn run_batch(
    loaded: &LoadedConfig,
    meta: &RunMeta,
    resume: bool,
    batch: &Path,
) -> Result<StageOutcome> {
    let batch = loaded.resolve(batch);
    let rows: Vec<(usize, RewardRequest)> = read_jsonl_numbered(&batch)?;
    let mut seen = HashSet::new();
    for (line, request) in &rows {
        let key = item_key(request);
        if !seen.insert(key.clone()) {
            bail!("{}:{}: duplicate item key {}", batch.display(), line, key);
        }
    }
    let requests: Vec<RewardRequest> = rows.into_iter().map(|(_, r)| r).collect();

    let checksum = loaded.config.semantic_checksum();
    let mut checkpoint =
        Checkpoint::open(&loaded.checkpoint_dir(), Stage::Reward, &checksum, resume)?;
    let output_path = loaded.output_dir().join("rewards.jsonl");
    let written = written_reward_keys(&output_path)?;
    let mut writer = JsonlWriter::open(&output_path, meta, resume)?;

    let backend = loaded.build_backend()?;
    let config = loaded.config.reward_config();
    let pending: Vec<&RewardRequest> = requests
        .iter()
        .filter(|r| {
            let key = item_key(r);
            !checkpoint.is_done(&key) && !written.contains(&key)
        })
        .collect();
    let width = loaded.config.backend.judge.max_in_flight.max(1);

    let mut item_errors = 0;
    let mut processed = 0;
    let backend_ref: &dyn ChatBackend = backend.as_ref();
    let config_ref = &config;
    let mut results = stream::iter(pending)
        .map(|request| async move {
            let record = reward_one(request, config_ref, backend_ref).await;
            (item_key(request), record)
        })
        .buffered(width);
    while let Some((key, record)) = results.next().await {
        if let Some(error) = &record.error {
            eprintln!("reward: {key}: {error}");
            item_errors += 1;
        }
        writer.write_line(&record)?;
        checkpoint.mark_done(&key)?;
        processed += 1;
    }

    Ok(StageOutcome::new(
        processed,
        item_errors,
        format!(
            "reward: {processed} items ({} already done) -> {}",
            checkpoint.completed_count() - processed,
            output_path.display()
        ),
    ))
}
