//! Rubric generation for every curated query, checkpointed per item.

use anyhow::{bail, Result};
use futures::stream::{self, StreamExt};
use serde::{Deserialize, Serialize};

use redraft_core::backend::ChatBackend;
use redraft_core::corpus::Query;
use redraft_core::rubric::{
    generate_keypoint_rubrics, generate_quality_criteria, KeyPointRubric, QualityCriterion,
    RubricSet,
};

use crate::checkpoint::{Checkpoint, Stage};
use crate::commands::StageOutcome;
use crate::config::LoadedConfig;
use crate::jsonl::{read_jsonl, JsonlWriter, RunMeta};

/// One rubric output line. Error records keep the query id and explain what
/// failed; downstream stages skip them.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RubricRecord {
    pub query_id: String,
    #[serde(default)]
    pub key_points: Vec<KeyPointRubric>,
    #[serde(default)]
    pub quality: Vec<QualityCriterion>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl RubricRecord {
    pub fn to_set(&self) -> Option<RubricSet> {
        if self.error.is_some() || self.key_points.is_empty() || self.quality.is_empty() {
            return None;
        }
        Some(RubricSet {
            query_id: self.query_id.clone(),
            key_points: self.key_points.clone(),
            quality: self.quality.clone(),
        })
    }
}

async fn generate_for(query: &Query, backend: &dyn ChatBackend) -> RubricRecord {
    let mut record = RubricRecord {
        query_id: query.id.clone(),
        key_points: Vec::new(),
        quality: Vec::new(),
        warnings: Vec::new(),
        error: None,
    };
    match generate_keypoint_rubrics(query, backend).await {
        Ok(generated) => {
            record.key_points = generated.key_points;
            record.warnings.extend(generated.warnings);
        }
        Err(e) => {
            record.error = Some(format!("key-point generation: {e}"));
            return record;
        }
    }
    match generate_quality_criteria(query, backend).await {
        Ok(generated) => {
            record.quality = generated.criteria;
            record.warnings.extend(generated.warnings);
        }
        Err(e) => record.error = Some(format!("quality-criteria generation: {e}")),
    }
    record
}

pub async fn run(loaded: &LoadedConfig, meta: &RunMeta, resume: bool) -> Result<StageOutcome> {
    let output_dir = loaded.output_dir();
    let curated = output_dir.join("curated.jsonl");
    let input = if curated.exists() {
        curated
    } else {
        loaded.input_path()
    };
    if !input.exists() {
        bail!("no input corpus at {}; run `curate` first", input.display());
    }
    let queries: Vec<Query> = read_jsonl(&input)?;

    let checksum = loaded.config.semantic_checksum();
    let mut checkpoint =
        Checkpoint::open(&loaded.checkpoint_dir(), Stage::Rubrics, &checksum, resume)?;
    let output_path = output_dir.join("rubrics.jsonl");
    let written = crate::commands::keys_in_output(&output_path, "query_id")?;
    let mut writer = JsonlWriter::open(&output_path, meta, resume)?;

    let backend = loaded.build_backend()?;
    let pending: Vec<&Query> = queries
        .iter()
        .filter(|q| !checkpoint.is_done(&q.id) && !written.contains(&q.id))
        .collect();
    let width = loaded.config.backend.judge.max_in_flight.max(1);

    let mut item_errors = 0;
    let mut processed = 0;
    let backend_ref: &dyn ChatBackend = backend.as_ref();
    let mut results = stream::iter(pending)
        .map(|query| async move { generate_for(query, backend_ref).await })
        .buffered(width);
    while let Some(record) = results.next().await {
        if let Some(error) = &record.error {
            eprintln!("rubrics: {}: {error}", record.query_id);
            item_errors += 1;
        }
        writer.write_line(&record)?;
        checkpoint.mark_done(&record.query_id)?;
        processed += 1;
    }

    Ok(StageOutcome::new(
        processed,
        item_errors,
        format!(
            "rubrics: {processed} generated ({} already done) -> {}",
            checkpoint.completed_count() - processed,
            output_path.display()
        ),
    ))
}
