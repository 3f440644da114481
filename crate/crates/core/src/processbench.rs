//! Benchmark-level scoring of reflection quality in arbitrary model outputs.
//!
//! Each item's thinking trace is decomposed into reflection segments and
//! every segment is judged along the three reward dimensions. The headline
//! number is the micro average (fraction of all segments passing all three
//! checks); the macro average over per-item pass rates is emitted alongside.
//! Items without segments are excluded from both aggregates and surfaced as
//! a count, since imputing 0 or 1 for them would distort cross-model
//! comparison.

use futures::stream::{self, StreamExt};
use serde::{Deserialize, Serialize};

use crate::backend::ChatBackend;
use crate::corpus::Query;
use crate::reward::{extract_segments, judge_segments, RewardError};
use crate::rubric::RubricSet;
use crate::synthesis::{parse_sample, SynthesisError};

/// One benchmark item: a query, a model's assembled output, and the rubrics
/// to judge against.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchItem {
    pub item_id: String,
    pub query: Query,
    pub sample: String,
    pub rubrics: RubricSet,
}

/// Per-item outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchItemRecord {
    pub item_id: String,
    pub k_segments: usize,
    pub passing: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub item_score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Aggregated benchmark report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub per_item: Vec<BenchItemRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub micro_score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub macro_score: Option<f64>,
    pub items_without_segments: usize,
    pub failed_items: usize,
}

/// Score one item: extract segments, judge them, count passes.
pub async fn bench_item(
    item: &BenchItem,
    backend: &dyn ChatBackend,
) -> Result<BenchItemRecord, RewardError> {
    let (thinking, answer) = parse_sample(&item.sample).map_err(|e| match e {
        SynthesisError::SampleParse(msg) => RewardError::SampleParseFailure(msg),
        other => RewardError::SampleParseFailure(other.to_string()),
    })?;
    let (segments, _warnings) = extract_segments(&thinking, &item.query, &answer, backend).await?;
    if segments.is_empty() {
        return Ok(BenchItemRecord {
            item_id: item.item_id.clone(),
            k_segments: 0,
            passing: 0,
            item_score: None,
            error: None,
        });
    }
    let judgments = judge_segments(&segments, &item.query, &answer, &item.rubrics, backend).await?;
    let passing = judgments.iter().filter(|j| j.r_p > 0).count();
    Ok(BenchItemRecord {
        item_id: item.item_id.clone(),
        k_segments: segments.len(),
        passing,
        item_score: Some(passing as f64 / segments.len() as f64),
        error: None,
    })
}

/// Score a whole benchmark. Items run concurrently; the report is ordered
/// by `item_id` and therefore invariant under input permutation. Per-item
/// failures are recorded and excluded from the aggregates.
pub async fn bench(
    items: &[BenchItem],
    backend: &dyn ChatBackend,
    concurrency: usize,
) -> BenchReport {
    let per_item: Vec<BenchItemRecord> = stream::iter(items.iter())
        .map(|item| async move {
            match bench_item(item, backend).await {
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
        .buffered(concurrency.max(1))
        .collect()
        .await;
    aggregate(per_item)
}

/// Fold per-item records into the report; records are ordered by `item_id`
/// first so the result does not depend on arrival order.
pub fn aggregate(mut per_item: Vec<BenchItemRecord>) -> BenchReport {
    per_item.sort_by(|a, b| a.item_id.cmp(&b.item_id));
    let failed_items = per_item.iter().filter(|r| r.error.is_some()).count();
    let items_without_segments = per_item
        .iter()
        .filter(|r| r.error.is_none() && r.k_segments == 0)
        .count();
    let scored: Vec<&BenchItemRecord> = per_item
        .iter()
        .filter(|r| r.error.is_none() && r.k_segments > 0)
        .collect();
    let (micro_score, macro_score) = if scored.is_empty() {
        (None, None)
    } else {
        let total_passing: usize = scored.iter().map(|r| r.passing).sum();
        let total_segments: usize = scored.iter().map(|r| r.k_segments).sum();
        let macro_sum: f64 = scored
            .iter()
            .map(|r| r.item_score.expect("scored items carry a score"))
            .sum();
        (
            Some(total_passing as f64 / total_segments as f64),
            Some(macro_sum / scored.len() as f64),
        )
    };
    BenchReport {
        per_item,
        micro_score,
        macro_score,
        items_without_segments,
        failed_items,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::scripted::{RuleBackend, ScriptRule};
    use crate::backend::RoleTag;
    use crate::corpus::TaskKind;
    use crate::rubric::{KeyPointRubric, QualityCriterion};

    fn rubrics(id: &str) -> RubricSet {
        RubricSet {
            query_id: id.into(),
            key_points: vec![KeyPointRubric {
                id: 1,
                key_point: "p".into(),
                score_standards: "s".into(),
            }],
            quality: vec![QualityCriterion {
                name: "Clarity".into(),
                description: "d".into(),
            }],
        }
    }

    fn item(id: &str, marker: &str) -> BenchItem {
        BenchItem {
            item_id: id.into(),
            query: Query::new(id, format!("task {marker}"), TaskKind::Creative),
            sample: format!("<think>{marker} thinking</think><answer>answer</answer>"),
            rubrics: rubrics(id),
        }
    }

    fn extract_reply(k: usize) -> String {
        let entries: Vec<String> = (1..=k)
            .map(|i| format!(r#"{{"id":{i},"content":"seg {i}"}}"#))
            .collect();
        format!(
            r#"{{"verifications":[{}],"total_count":{k}}}"#,
            entries.join(",")
        )
    }

    fn judge_reply(outcomes: &[bool]) -> String {
        let entries: Vec<String> = outcomes
            .iter()
            .enumerate()
            .map(|(i, pass)| {
                let v = if *pass { 1 } else { -1 };
                format!(
                    r#"{{"id":{},"issue_validity":{v},"revision_quality":{v},"implementation":{v}}}"#,
                    i + 1
                )
            })
            .collect();
        format!(r#"{{"judgments":[{}]}}"#, entries.join(","))
    }

    fn backend_for(specs: &[(&str, usize, usize)]) -> RuleBackend {
        let mut rules = Vec::new();
        for (marker, k, passing) in specs {
            if *k > 0 {
                rules.push(ScriptRule {
                    role: Some(RoleTag::Judge),
                    contains: vec![marker.to_string(), "identify and extract".into()],
                    reply: extract_reply(*k),
                });
                let outcomes: Vec<bool> = (0..*k).map(|i| i < *passing).collect();
                rules.push(ScriptRule {
                    role: Some(RoleTag::Judge),
                    contains: vec![marker.to_string(), "three-dimensional scoring".into()],
                    reply: judge_reply(&outcomes),
                });
            } else {
                rules.push(ScriptRule {
                    role: Some(RoleTag::Judge),
                    contains: vec![marker.to_string()],
                    reply: r#"{"verifications":[],"total_count":0}"#.into(),
                });
            }
        }
        RuleBackend::new(rules)
    }

    #[tokio::test]
    async fn item_score_is_pass_ratio() {
        let backend = backend_for(&[("M1", 4, 3)]);
        let record = bench_item(&item("i1", "M1"), &backend).await.unwrap();
        assert_eq!(record.k_segments, 4);
        assert_eq!(record.passing, 3);
        assert_eq!(record.item_score, Some(0.75));
    }

    #[tokio::test]
    async fn zero_segment_item_is_excluded_but_counted() {
        let backend = backend_for(&[("M1", 0, 0), ("M2", 2, 2)]);
        let report = bench(&[item("i1", "M1"), item("i2", "M2")], &backend, 2).await;
        assert_eq!(report.items_without_segments, 1);
        assert_eq!(report.micro_score, Some(1.0));
        assert_eq!(report.macro_score, Some(1.0));
    }

    #[tokio::test]
    async fn micro_equals_macro_on_balanced_items() {
        // (2 of 2) and (0 of 2): same segment count per item, so both
        // aggregates land on 0.5.
        let backend = backend_for(&[("M1", 2, 2), ("M2", 2, 0)]);
        let report = bench(&[item("i1", "M1"), item("i2", "M2")], &backend, 2).await;
        assert_eq!(report.micro_score, Some(0.5));
        assert_eq!(report.macro_score, Some(0.5));
    }

    #[tokio::test]
    async fn micro_and_macro_disagree_on_uneven_items() {
        // (3 of 3) and (0 of 1): micro 3/4, macro (1 + 0)/2.
        let backend = backend_for(&[("M1", 3, 3), ("M2", 1, 0)]);
        let report = bench(&[item("i1", "M1"), item("i2", "M2")], &backend, 2).await;
        assert_eq!(report.micro_score, Some(0.75));
        assert_eq!(report.macro_score, Some(0.5));
    }

    #[tokio::test]
    async fn empty_benchmark_still_serializes() {
        let backend = backend_for(&[]);
        let report = bench(&[], &backend, 1).await;
        assert_eq!(report.micro_score, None);
        assert_eq!(report.macro_score, None);
        let json = serde_json::to_string(&report).unwrap();
        assert!(json.contains("per_item"));
    }

    #[tokio::test]
    async fn report_is_invariant_under_permutation() {
        let backend = backend_for(&[("M1", 2, 1), ("M2", 3, 3), ("M3", 1, 0)]);
        let items = [item("b", "M2"), item("a", "M1"), item("c", "M3")];
        let forward = bench(&items, &backend, 3).await;
        let reversed: Vec<BenchItem> = items.iter().rev().cloned().collect();
        let backward = bench(&reversed, &backend, 1).await;
        assert_eq!(forward, backward);
        assert_eq!(forward.per_item[0].item_id, "a");
    }

    #[tokio::test]
    async fn failing_item_is_recorded_and_excluded() {
        let mut bad = item("i1", "M1");
        bad.sample = "no think block".into();
        let backend = backend_for(&[("M2", 2, 2)]);
        let report = bench(&[bad, item("i2", "M2")], &backend, 2).await;
        assert_eq!(report.failed_items, 1);
        assert!(report.per_item[0].error.is_some());
        assert_eq!(report.micro_score, Some(1.0));
    }
}
