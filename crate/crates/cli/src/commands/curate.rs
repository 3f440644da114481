//! Corpus curation: length filter, 3-gram dedup, token-budget truncation,
//! and optional difficulty-gap top-k selection.

use std::collections::{HashMap, HashSet};
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use serde::Serialize;

use redraft_core::corpus::{curate, rank_by_gap, CurationStats, DifficultyRecord, Query};

use crate::commands::StageOutcome;
use crate::config::LoadedConfig;
use crate::jsonl::{read_jsonl_numbered, write_json_report, JsonlWriter, RunMeta};

#[derive(Serialize)]
struct StatsBody {
    #[serde(flatten)]
    stats: CurationStats,
}

pub fn run(
    loaded: &LoadedConfig,
    meta: &RunMeta,
    difficulty: Option<PathBuf>,
    top_k_flag: Option<usize>,
) -> Result<StageOutcome> {
    let input_path = loaded.input_path();
    let rows: Vec<(usize, Query)> = read_jsonl_numbered(&input_path)?;

    let mut seen = HashSet::new();
    for (line, query) in &rows {
        if !seen.insert(query.id.clone()) {
            bail!(
                "{}:{}: duplicate query id {}",
                input_path.display(),
                line,
                query.id
            );
        }
        query
            .validate()
            .with_context(|| format!("{}:{}", input_path.display(), line))?;
    }
    let queries: Vec<Query> = rows.into_iter().map(|(_, q)| q).collect();

    let (mut curated, mut stats) = curate(queries, &loaded.config.curation_params());

    let top_k = top_k_flag.or(loaded.config.corpus.top_k);
    if top_k.is_some() && difficulty.is_none() {
        bail!("--top-k requires a difficulty file (--difficulty)");
    }
    if let Some(difficulty_path) = difficulty {
        let difficulty_path = loaded.resolve(&difficulty_path);
        let records: Vec<(usize, DifficultyRecord)> = read_jsonl_numbered(&difficulty_path)?;
        for (line, record) in &records {
            record
                .validate()
                .with_context(|| format!("{}:{}", difficulty_path.display(), line))?;
        }
        let records: Vec<DifficultyRecord> = records.into_iter().map(|(_, r)| r).collect();
        let k = top_k.unwrap_or(records.len());
        let ranked = rank_by_gap(&records, k);
        let by_id: HashMap<String, Query> =
            curated.into_iter().map(|q| (q.id.clone(), q)).collect();
        curated = ranked
            .iter()
            .filter_map(|record| by_id.get(&record.query_id).cloned())
            .collect();
        stats.output_count = curated.len();
    }

    let output_dir = loaded.output_dir();
    let curated_path = output_dir.join("curated.jsonl");
    // Curation is pure and cheap, so the output is simply rewritten.
    if curated_path.exists() {
        std::fs::remove_file(&curated_path)?;
    }
    let mut writer = JsonlWriter::create(&curated_path, meta)?;
    for query in &curated {
        writer.write_line(query)?;
    }

    let stats_path = output_dir.join("curate_stats.json");
    write_json_report(&stats_path, meta, &StatsBody { stats })?;
    println!("{}", serde_json::to_string(&stats)?);

    Ok(StageOutcome::new(
        stats.input_count,
        0,
        format!(
            "curate: {} -> {} queries ({})",
            stats.input_count,
            stats.output_count,
            curated_path.display()
        ),
    ))
}
