//! Reflection-quality benchmark: per-item audit lines plus an aggregate
//! report rebuilt from them, so interrupted runs resume cleanly.

use std::collections::HashSet;
use std::path::Path;

use anyhow::{bail, Result};
use futures::stream::{self, StreamExt};

use redraft_core::backend::ChatBackend;
use redraft_core::processbench::{aggregate, bench_item, BenchItem, BenchItemRecord};

use crate::checkpoint::{Checkpoint, Stage};
use crate::commands::StageOutcome;
use crate::config::LoadedConfig;
use crate::jsonl::{read_jsonl, read_jsonl_numbered, write_json_report, JsonlWriter, RunMeta};

pub async fn run(
    loaded: &LoadedConfig,
    meta: &RunMeta,
    resume: bool,
    input: &Path,
) -> Result<StageOutcome> {
    let input = loaded.resolve(input);
    let rows: Vec<(usize, BenchItem)> = read_jsonl_numbered(&input)?;
    let mut seen = HashSet::new();
    for (line, item) in &rows {
        if !seen.insert(item.item_id.clone()) {
            bail!(
                "{}:{}: duplicate item id {}",
                input.display(),
                line,
                item.item_id
            );
        }
    }
    let items: Vec<BenchItem> = rows.into_iter().map(|(_, i)| i).collect();

    let checksum = loaded.config.semantic_checksum();
    let mut checkpoint =
        Checkpoint::open(&loaded.checkpoint_dir(), Stage::Bench, &checksum, resume)?;
    let output_dir = loaded.output_dir();
    let items_path = output_dir.join("bench_items.jsonl");
    let written = crate::commands::keys_in_output(&items_path, "item_id")?;
    let mut writer = JsonlWriter::open(&items_path, meta, resume)?;

    let backend = loaded.build_backend()?;
    let pending: Vec<&BenchItem> = items
        .iter()
        .filter(|i| !checkpoint.is_done(&i.item_id) && !written.contains(&i.item_id))
        .collect();
    let width = loaded.config.backend.judge.max_in_flight.max(1);

    let mut processed = 0;
    let backend_ref: &dyn ChatBackend = backend.as_ref();
    let mut results = stream::iter(pending)
        .map(|item| async move {
            match bench_item(item, backend_ref).await {
                Ok(record) => record,
                Err(e) => BenchItemRecord {
                    item_id: item.item_id.clone(),
                    k_segments: 0,
                    passing: 0,
                    item_score: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .buffered(width);
    while let Some(record) = results.next().await {
        if let Some(error) = &record.error {
            eprintln!("bench: {}: {error}", record.item_id);
        }
        writer.write_line(&record)?;
        checkpoint.mark_done(&record.item_id)?;
        processed += 1;
    }
    drop(writer);

    // The aggregate report always reflects the full audit file.
    let all_records: Vec<BenchItemRecord> = read_jsonl(&items_path)?;
    let report = aggregate(all_records);
    let report_path = output_dir.join("bench_report.json");
    write_json_report(&report_path, meta, &report)?;

    let fmt = |score: Option<f64>| score.map_or("absent".to_owned(), |s| format!("{s:.6}"));
    println!(
        "micro_score={} macro_score={} items_without_segments={} failed_items={}",
        fmt(report.micro_score),
        fmt(report.macro_score),
        report.items_without_segments,
        report.failed_items
    );

    Ok(StageOutcome::new(
        processed,
        report.failed_items,
        format!(
            "bench: {} items scored -> {}",
            report.per_item.len(),
            report_path.display()
        ),
    ))
}
