//! Query corpus curation: length filtering, 3-gram near-duplicate removal,
//! token budgeting, and difficulty-gap ranking.
//!
//! All operations are pure functions over in-memory corpora. Tokenization is
//! Unicode-whitespace word splitting after NFC normalization and case
//! folding, so results do not depend on any model-specific tokenizer.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

/// Minimum query length kept by the default length filter.
pub const DEFAULT_MIN_TOKENS: usize = 10;
/// Similarity above which a query counts as a near-duplicate.
pub const DEFAULT_DEDUP_THRESHOLD: f64 = 0.7;
/// Joint token budget for query text plus materials.
pub const DEFAULT_MAX_QUERY_TOKENS: usize = 10_000;

/// Which kind of writing task a query asks for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Creative,
    Report,
}

/// One writing task, optionally carrying retrieved source materials and a
/// high-quality reference answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub id: String,
    pub text: String,
    pub task_kind: TaskKind,
    #[serde(default)]
    pub category: String,
    /// Retrieved context for report tasks; empty for creative queries.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub materials: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<String>,
    /// Unknown input fields, preserved on round-trip.
    #[serde(flatten)]
    pub extra: serde_json::Map<String, serde_json::Value>,
}

impl Query {
    pub fn new(id: impl Into<String>, text: impl Into<String>, task_kind: TaskKind) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
            task_kind,
            category: String::new(),
            materials: Vec::new(),
            reference: None,
            extra: serde_json::Map::new(),
        }
    }

    /// Query text with materials appended, as rendered into prompts.
    pub fn full_text(&self) -> String {
        if self.materials.is_empty() {
            return self.text.clone();
        }
        let mut out = self.text.clone();
        for (i, m) in self.materials.iter().enumerate() {
            out.push_str(&format!("\n\n[Material {}]\n{}", i + 1, m));
        }
        out
    }

    /// Creative queries must not carry materials.
    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.task_kind == TaskKind::Creative && !self.materials.is_empty() {
            return Err(CorpusError::MaterialsOnCreative {
                id: self.id.clone(),
            });
        }
        Ok(())
    }
}

/// Per-query difficulty gap between a reference answer and a model answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifficultyRecord {
    pub query_id: String,
    pub s_ref: f64,
    pub s_model: f64,
    pub gap: f64,
}

impl DifficultyRecord {
    pub fn new(query_id: impl Into<String>, s_ref: f64, s_model: f64) -> Self {
        Self {
            query_id: query_id.into(),
            s_ref,
            s_model,
            gap: s_ref - s_model,
        }
    }

    /// `gap` must equal `s_ref - s_model` exactly.
    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.gap != self.s_ref - self.s_model {
            return Err(CorpusError::GapMismatch {
                query_id: self.query_id.clone(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CorpusError {
    #[error("creative query {id} carries materials")]
    MaterialsOnCreative { id: String },
    #[error("difficulty record {query_id}: gap does not equal s_ref - s_model")]
    GapMismatch { query_id: String },
    #[error("duplicate query id {id}")]
    DuplicateId { id: String },
}

/// Normalized word tokens: NFC, case-folded, split on Unicode whitespace.
pub fn tokens(text: &str) -> Vec<String> {
    text.nfc()
        .collect::<String>()
        .to_lowercase()
        .split_whitespace()
        .map(str::to_owned)
        .collect()
}

/// Token count under the same normalization as [`tokens`].
pub fn token_count(text: &str) -> usize {
    text.nfc().collect::<String>().split_whitespace().count()
}

/// Keep queries whose text counts at least `min_tokens` tokens, in order.
pub fn filter_short(queries: Vec<Query>, min_tokens: usize) -> Vec<Query> {
    queries
        .into_iter()
        .filter(|q| token_count(&q.text) >= min_tokens)
        .collect()
}

// Word-level 3-grams. Texts with fewer than 3 tokens collapse to a single
// padded gram so similarity stays defined; the `^`/`$` padding and the
// US separator keep padded grams disjoint from genuine ones.
fn gram_set(text: &str) -> HashSet<String> {
    let toks = tokens(text);
    if toks.len() < 3 {
        return HashSet::from([format!("^{}$", toks.join(" "))]);
    }
    toks.windows(3).map(|w| w.join("\u{1f}")).collect()
}

fn jaccard_of_sets(a: &HashSet<String>, b: &HashSet<String>) -> f64 {
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    inter as f64 / union as f64
}

/// Jaccard similarity of the word-level 3-gram sets of two texts.
pub fn jaccard_3gram(a: &str, b: &str) -> f64 {
    jaccard_of_sets(&gram_set(a), &gram_set(b))
}

/// Greedy first-wins deduplication in input order: a query is dropped iff
/// its similarity to any retained earlier query exceeds `threshold`.
pub fn dedup(queries: Vec<Query>, threshold: f64) -> Vec<Query> {
    let mut kept: Vec<Query> = Vec::with_capacity(queries.len());
    let mut kept_grams: Vec<HashSet<String>> = Vec::with_capacity(queries.len());
    for q in queries {
        let grams = gram_set(&q.text);
        let dup = kept_grams
            .iter()
            .any(|k| jaccard_of_sets(k, &grams) > threshold);
        if !dup {
            kept.push(q);
            kept_grams.push(grams);
        }
    }
    kept
}

fn words(text: &str) -> Vec<&str> {
    text.split_whitespace().collect()
}

/// Joint token count of query text plus all materials.
pub fn joint_token_count(query: &Query) -> usize {
    token_count(&query.text)
        + query
            .materials
            .iter()
            .map(|m| token_count(m))
            .sum::<usize>()
}

/// Cap the joint token budget of query text plus materials at `max_tokens`.
///
/// Materials are trimmed from the tail first (the last material shrinks
/// first); the query text is cut only once all materials are gone. A field
/// that gets cut is re-joined with single spaces; untouched fields stay
/// verbatim.
pub fn truncate(query: Query, max_tokens: usize) -> Query {
    let total = joint_token_count(&query);
    if total <= max_tokens {
        return query;
    }
    let mut q = query;
    let mut over = total - max_tokens;
    while over > 0 {
        let Some(last) = q.materials.last_mut() else {
            break;
        };
        let w = words(last);
        if w.len() <= over {
            over -= w.len();
            q.materials.pop();
        } else {
            let keep = w.len() - over;
            *last = w[..keep].join(" ");
            over = 0;
        }
    }
    if over > 0 {
        let w = words(&q.text);
        let keep = w.len().saturating_sub(over);
        q.text = w[..keep].join(" ");
    }
    q
}

/// The `k` records with the largest gaps, descending; ties broken by
/// ascending `query_id`. Returns everything when `k` exceeds the input.
pub fn rank_by_gap(records: &[DifficultyRecord], k: usize) -> Vec<DifficultyRecord> {
    let mut sorted = records.to_vec();
    sorted.sort_by(|a, b| {
        b.gap
            .total_cmp(&a.gap)
            .then_with(|| a.query_id.cmp(&b.query_id))
    });
    sorted.truncate(k);
    sorted
}

/// Knobs for the standard curation pass.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CurationParams {
    pub min_tokens: usize,
    pub dedup_threshold: f64,
    pub max_tokens: usize,
}

impl Default for CurationParams {
    fn default() -> Self {
        Self {
            min_tokens: DEFAULT_MIN_TOKENS,
            dedup_threshold: DEFAULT_DEDUP_THRESHOLD,
            max_tokens: DEFAULT_MAX_QUERY_TOKENS,
        }
    }
}

/// Summary emitted alongside a curated corpus.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CurationStats {
    pub input_count: usize,
    pub short_dropped: usize,
    pub dup_dropped: usize,
    pub truncated: usize,
    pub output_count: usize,
}

/// Run filter -> dedup -> truncate and collect the drop counts.
pub fn curate(queries: Vec<Query>, params: &CurationParams) -> (Vec<Query>, CurationStats) {
    let input_count = queries.len();
    let long = filter_short(queries, params.min_tokens);
    let short_dropped = input_count - long.len();
    let unique = dedup(long, params.dedup_threshold);
    let dup_dropped = input_count - short_dropped - unique.len();
    let mut truncated = 0;
    let out: Vec<Query> = unique
        .into_iter()
        .map(|q| {
            if joint_token_count(&q) > params.max_tokens {
                truncated += 1;
            }
            truncate(q, params.max_tokens)
        })
        .collect();
    let stats = CurationStats {
        input_count,
        short_dropped,
        dup_dropped,
        truncated,
        output_count: out.len(),
    };
    (out, stats)
}
