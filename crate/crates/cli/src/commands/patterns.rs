//! Thinking-pattern classification across a trace file, with pooled
//! distribution, helpfulness accounting, and optional RA/FLC/QE revision
//! classification. Emits JSON for machines and CSV for plotting.

use std::collections::HashSet;
use std::path::Path;

use anyhow::{bail, Result};
use futures::stream::{self, StreamExt};
use serde::{Deserialize, Serialize};

use redraft_core::backend::ChatBackend;
use redraft_core::patterns::{
    classify_patterns, classify_revisions, pattern_distribution, revision_distribution,
    PatternCounts, PatternDistribution, PatternInstance, PatternReport, RevisionDistribution,
    RevisionInstance, TraceInput, TruthOrRubrics,
};

use crate::checkpoint::{Checkpoint, Stage};
use crate::commands::StageOutcome;
use crate::config::LoadedConfig;
use crate::jsonl::{read_jsonl, read_jsonl_numbered, write_json_report, JsonlWriter, RunMeta};

/// One per-trace output line.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceRecord {
    pub trace_id: String,
    #[serde(default)]
    pub instances: Vec<PatternInstance>,
    #[serde(default)]
    pub counts: PatternCounts,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub revisions: Option<Vec<RevisionInstance>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Serialize)]
struct PatternsBody {
    #[serde(flatten)]
    distribution: PatternDistribution,
    #[serde(skip_serializing_if = "Option::is_none")]
    revisions: Option<RevisionDistribution>,
    trace_errors: usize,
}

async fn classify_one(
    trace: &TraceInput,
    with_revisions: bool,
    backend: &dyn ChatBackend,
) -> TraceRecord {
    let mut record = TraceRecord {
        trace_id: trace.trace_id.clone(),
        instances: Vec::new(),
        counts: PatternCounts::default(),
        warnings: Vec::new(),
        revisions: None,
        error: None,
    };
    match classify_patterns(
        &trace.trace_id,
        &trace.question,
        &trace.reasoning,
        &trace.truth_or_rubrics,
        backend,
    )
    .await
    {
        Ok(report) => {
            record.instances = report.instances;
            record.counts = report.counts;
            record.warnings = report.warnings;
        }
        Err(e) => {
            record.error = Some(e.to_string());
            return record;
        }
    }
    // Revision classification needs rubrics; ground-truth traces skip it.
    if with_revisions {
        if let TruthOrRubrics::Rubrics(rubrics) = &trace.truth_or_rubrics {
            match classify_revisions(&trace.question, &trace.reasoning, rubrics, backend).await {
                Ok(instances) => record.revisions = Some(instances),
                Err(e) => record.error = Some(format!("revision classification: {e}")),
            }
        }
    }
    record
}

pub async fn run(
    loaded: &LoadedConfig,
    meta: &RunMeta,
    resume: bool,
    input: &Path,
    with_revisions: bool,
) -> Result<StageOutcome> {
    let input = loaded.resolve(input);
    let rows: Vec<(usize, TraceInput)> = read_jsonl_numbered(&input)?;
    let mut seen = HashSet::new();
    for (line, trace) in &rows {
        if !seen.insert(trace.trace_id.clone()) {
            bail!(
                "{}:{}: duplicate trace id {}",
                input.display(),
                line,
                trace.trace_id
            );
        }
    }
    let traces: Vec<TraceInput> = rows.into_iter().map(|(_, t)| t).collect();

    let checksum = loaded.config.semantic_checksum();
    let mut checkpoint =
        Checkpoint::open(&loaded.checkpoint_dir(), Stage::Patterns, &checksum, resume)?;
    let output_dir = loaded.output_dir();
    let traces_path = output_dir.join("patterns_traces.jsonl");
    let written = crate::commands::keys_in_output(&traces_path, "trace_id")?;
    let mut writer = JsonlWriter::open(&traces_path, meta, resume)?;

    let backend = loaded.build_backend()?;
    let pending: Vec<&TraceInput> = traces
        .iter()
        .filter(|t| !checkpoint.is_done(&t.trace_id) && !written.contains(&t.trace_id))
        .collect();
    let width = loaded.config.backend.judge.max_in_flight.max(1);

    let mut processed = 0;
    let backend_ref: &dyn ChatBackend = backend.as_ref();
    let mut results = stream::iter(pending)
        .map(|trace| async move { classify_one(trace, with_revisions, backend_ref).await })
        .buffered(width);
    while let Some(record) = results.next().await {
        if let Some(error) = &record.error {
            eprintln!("patterns: {}: {error}", record.trace_id);
        }
        writer.write_line(&record)?;
        checkpoint.mark_done(&record.trace_id)?;
        processed += 1;
    }
    drop(writer);

    // Aggregates always reflect the full per-trace file.
    let records: Vec<TraceRecord> = read_jsonl(&traces_path)?;
    let trace_errors = records.iter().filter(|r| r.error.is_some()).count();
    let reports: Vec<PatternReport> = records
        .iter()
        .filter(|r| r.error.is_none())
        .map(|r| PatternReport {
            trace_id: r.trace_id.clone(),
            instances: r.instances.clone(),
            counts: r.counts,
            warnings: Vec::new(),
        })
        .collect();
    let distribution = pattern_distribution(&reports);
    let revision_instances: Vec<RevisionInstance> = records
        .iter()
        .filter_map(|r| r.revisions.as_ref())
        .flatten()
        .cloned()
        .collect();
    let revisions = with_revisions.then(|| revision_distribution(&revision_instances));

    let json_path = output_dir.join("patterns.json");
    write_json_report(
        &json_path,
        meta,
        &PatternsBody {
            distribution: distribution.clone(),
            revisions,
            trace_errors,
        },
    )?;

    let csv_path = output_dir.join("patterns.csv");
    let mut csv = String::from("kind,share,helpful\n");
    for kind in &distribution.kinds {
        let fmt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x}"));
        csv.push_str(&format!(
            "{},{},{}\n",
            kind.kind,
            fmt(kind.share),
            fmt(kind.helpful)
        ));
    }
    std::fs::write(&csv_path, csv)?;

    for kind in &distribution.kinds {
        let fmt = |v: Option<f64>| v.map_or("absent".to_owned(), |x| format!("{x:.4}"));
        println!(
            "{}: instances={} share={} helpful={}",
            kind.kind,
            kind.instances,
            fmt(kind.share),
            fmt(kind.helpful)
        );
    }

    Ok(StageOutcome::new(
        processed,
        trace_errors,
        format!(
            "patterns: {} traces classified -> {} and {}",
            records.len(),
            json_path.display(),
            csv_path.display()
        ),
    ))
}
