//! Reasoning-trace instrumentation: five-pattern classification with
//! helpfulness accounting, and the RA/FLC/QE revision-type taxonomy.

use std::fmt;

use futures::stream::{self, StreamExt};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::json::extract_json;
use crate::backend::{BackendError, ChatBackend, ChatRequest};
use crate::prompts;

/// The five-pattern taxonomy of thinking trajectories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatternKind {
    AnswerVerification,
    Backtracking,
    SubgoalSetting,
    BackwardChaining,
    Summarization,
}

impl PatternKind {
    pub const ALL: [PatternKind; 5] = [
        PatternKind::AnswerVerification,
        PatternKind::Backtracking,
        PatternKind::SubgoalSetting,
        PatternKind::BackwardChaining,
        PatternKind::Summarization,
    ];

    /// JSON key used by the classification prompt.
    pub fn key(self) -> &'static str {
        match self {
            PatternKind::AnswerVerification => "answer_verification",
            PatternKind::Backtracking => "backtracking",
            PatternKind::SubgoalSetting => "subgoal_setting",
            PatternKind::BackwardChaining => "backward_chaining",
            PatternKind::Summarization => "summarization",
        }
    }
}

impl fmt::Display for PatternKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

/// Whether an instance helped reach the correct (or high-scoring) answer;
/// `na` marks traces whose final answer missed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Contribution {
    Yes,
    No,
    Na,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternInstance {
    pub kind: PatternKind,
    pub content: String,
    pub contribution: Contribution,
}

/// Per-kind instance counts in stable order.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatternCounts {
    pub answer_verification: usize,
    pub backtracking: usize,
    pub subgoal_setting: usize,
    pub backward_chaining: usize,
    pub summarization: usize,
}

impl PatternCounts {
    pub fn get(&self, kind: PatternKind) -> usize {
        match kind {
            PatternKind::AnswerVerification => self.answer_verification,
            PatternKind::Backtracking => self.backtracking,
            PatternKind::SubgoalSetting => self.subgoal_setting,
            PatternKind::BackwardChaining => self.backward_chaining,
            PatternKind::Summarization => self.summarization,
        }
    }

    fn bump(&mut self, kind: PatternKind) {
        match kind {
            PatternKind::AnswerVerification => self.answer_verification += 1,
            PatternKind::Backtracking => self.backtracking += 1,
            PatternKind::SubgoalSetting => self.subgoal_setting += 1,
            PatternKind::BackwardChaining => self.backward_chaining += 1,
            PatternKind::Summarization => self.summarization += 1,
        }
    }

    pub fn from_instances(instances: &[PatternInstance]) -> Self {
        let mut counts = Self::default();
        for instance in instances {
            counts.bump(instance.kind);
        }
        counts
    }
}

/// Classification result for one trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternReport {
    pub trace_id: String,
    pub instances: Vec<PatternInstance>,
    pub counts: PatternCounts,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// The grading context a trace is classified against: a ground truth for
/// verifiable tasks, evaluation rubrics for writing tasks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "text", rename_all = "snake_case")]
pub enum TruthOrRubrics {
    GroundTruth(String),
    Rubrics(String),
}

#[derive(Debug, Error)]
pub enum PatternError {
    #[error("usage error: {0}")]
    Usage(String),
    #[error("pattern parse failure: {0}")]
    PatternParseFailure(String),
    #[error("unknown contribution {value:?} on {kind} instance {index}")]
    UnknownContribution {
        kind: &'static str,
        index: usize,
        value: String,
    },
    #[error("revision parse failure: {0}")]
    RevisionParseFailure(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

/// Classify all five pattern kinds in one reasoning trace.
pub async fn classify_patterns(
    trace_id: &str,
    question: &str,
    reasoning: &str,
    truth: &TruthOrRubrics,
    backend: &dyn ChatBackend,
) -> Result<PatternReport, PatternError> {
    if reasoning.trim().is_empty() {
        return Err(PatternError::Usage("reasoning must be non-empty".into()));
    }
    // Writing tasks swap ground truth for evaluation rubrics in the prompt.
    let (template, truth_text): (String, &str) = match truth {
        TruthOrRubrics::GroundTruth(text) => (prompts::PATTERN_CLASSIFY.to_owned(), text),
        TruthOrRubrics::Rubrics(text) => (
            prompts::PATTERN_CLASSIFY.replace(
                "Ground Truth: {ground_truth}",
                "Evaluation Rubrics: {ground_truth}",
            ),
            text,
        ),
    };
    let prompt = prompts::render(
        &template,
        &[
            ("question", question),
            ("reasoning", reasoning),
            ("ground_truth", truth_text),
        ],
    );
    let reply = backend.complete(ChatRequest::judge(&prompt)).await?;
    let value =
        extract_json(&reply.text).map_err(|e| PatternError::PatternParseFailure(e.to_string()))?;

    let mut instances = Vec::new();
    let mut warnings = Vec::new();
    for kind in PatternKind::ALL {
        let Some(section) = value.get(kind.key()) else {
            return Err(PatternError::PatternParseFailure(format!(
                "reply lacks the `{}` key",
                kind.key()
            )));
        };
        let entries = section
            .get("instances")
            .and_then(|v| v.as_array())
            .cloned()
            .unwrap_or_default();
        for (i, entry) in entries.iter().enumerate() {
            let content = entry
                .get("content")
                .and_then(|v| v.as_str())
                .unwrap_or_default()
                .to_owned();
            let raw = entry
                .get("contribution")
                .and_then(|v| v.as_str())
                .unwrap_or_default();
            let contribution = match raw {
                "yes" => Contribution::Yes,
                "no" => Contribution::No,
                "na" => Contribution::Na,
                other => {
                    return Err(PatternError::UnknownContribution {
                        kind: kind.key(),
                        index: i + 1,
                        value: other.to_owned(),
                    })
                }
            };
            instances.push(PatternInstance {
                kind,
                content,
                contribution,
            });
        }
        if let Some(count) = section.get("count").and_then(|v| v.as_u64()) {
            if count as usize != entries.len() {
                warnings.push(format!(
                    "{}: count {} disagrees with {} listed instances; trusting the list",
                    kind.key(),
                    count,
                    entries.len()
                ));
            }
        }
    }
    let counts = PatternCounts::from_instances(&instances);
    Ok(PatternReport {
        trace_id: trace_id.to_owned(),
        instances,
        counts,
        warnings,
    })
}

/// Share and helpfulness of one pattern kind across a trace pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KindShare {
    pub kind: PatternKind,
    pub instances: usize,
    pub yes: usize,
    pub no: usize,
    pub na: usize,
    /// Fraction of all instances; absent when the pool is empty.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub share: Option<f64>,
    /// yes / (yes + no); absent when no instance was gradable. The `na`
    /// instances are excluded so answer correctness does not masquerade as
    /// pattern utility.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub helpful: Option<f64>,
}

/// Pooled pattern distribution over many traces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternDistribution {
    pub total_instances: usize,
    pub kinds: Vec<KindShare>,
}

/// Pool instance counts across traces and compute per-kind share and
/// helpfulness.
pub fn pattern_distribution(reports: &[PatternReport]) -> PatternDistribution {
    let mut kinds = Vec::with_capacity(PatternKind::ALL.len());
    let total_instances: usize = reports.iter().map(|r| r.instances.len()).sum();
    for kind in PatternKind::ALL {
        let mut yes = 0;
        let mut no = 0;
        let mut na = 0;
        for report in reports {
            for instance in report.instances.iter().filter(|i| i.kind == kind) {
                match instance.contribution {
                    Contribution::Yes => yes += 1,
                    Contribution::No => no += 1,
                    Contribution::Na => na += 1,
                }
            }
        }
        let instances = yes + no + na;
        let share = (total_instances > 0).then(|| instances as f64 / total_instances as f64);
        let helpful = (yes + no > 0).then(|| yes as f64 / (yes + no) as f64);
        kinds.push(KindShare {
            kind,
            instances,
            yes,
            no,
            na,
            share,
            helpful,
        });
    }
    PatternDistribution {
        total_instances,
        kinds,
    }
}

/// Revision-improvement taxonomy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RevisionCategory {
    RA,
    FLC,
    QE,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RevisionInstance {
    pub category: RevisionCategory,
    pub content: String,
    pub contribution_note: String,
}

/// Classify the revision patterns that contributed to quality improvement.
pub async fn classify_revisions(
    question: &str,
    reasoning: &str,
    rubrics: &str,
    backend: &dyn ChatBackend,
) -> Result<Vec<RevisionInstance>, PatternError> {
    if reasoning.trim().is_empty() {
        return Err(PatternError::Usage("reasoning must be non-empty".into()));
    }
    let prompt = prompts::render(
        prompts::REVISION_CLASSIFY,
        &[
            ("question", question),
            ("reasoning_content", reasoning),
            ("rubrics", rubrics),
        ],
    );
    let reply = backend.complete(ChatRequest::judge(&prompt)).await?;
    let value =
        extract_json(&reply.text).map_err(|e| PatternError::RevisionParseFailure(e.to_string()))?;
    let Some(entries) = value.get("patterns").and_then(|v| v.as_array()) else {
        return Err(PatternError::RevisionParseFailure(
            "reply lacks a `patterns` array".into(),
        ));
    };
    let mut instances = Vec::with_capacity(entries.len());
    for (i, entry) in entries.iter().enumerate() {
        let category = match entry.get("category").and_then(|v| v.as_str()) {
            Some("RA") => RevisionCategory::RA,
            Some("FLC") => RevisionCategory::FLC,
            Some("QE") => RevisionCategory::QE,
            other => {
                return Err(PatternError::RevisionParseFailure(format!(
                    "pattern {}: category {other:?} is not RA, FLC, or QE",
                    i + 1
                )))
            }
        };
        instances.push(RevisionInstance {
            category,
            content: entry
                .get("content")
                .and_then(|v| v.as_str())
                .unwrap_or_default()
                .to_owned(),
            contribution_note: entry
                .get("contribution")
                .and_then(|v| v.as_str())
                .unwrap_or_default()
                .to_owned(),
        });
    }
    Ok(instances)
}

/// Count and percentage for one revision category.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CategoryStat {
    pub count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub percent: Option<f64>,
}

/// Percentages over the three revision categories; they sum to 100 when any
/// instance exists.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RevisionDistribution {
    pub total: usize,
    pub ra: CategoryStat,
    pub flc: CategoryStat,
    pub qe: CategoryStat,
}

pub fn revision_distribution(instances: &[RevisionInstance]) -> RevisionDistribution {
    let total = instances.len();
    let count_of = |cat: RevisionCategory| instances.iter().filter(|i| i.category == cat).count();
    let stat = |count: usize| CategoryStat {
        count,
        percent: (total > 0).then(|| count as f64 / total as f64 * 100.0),
    };
    RevisionDistribution {
        total,
        ra: stat(count_of(RevisionCategory::RA)),
        flc: stat(count_of(RevisionCategory::FLC)),
        qe: stat(count_of(RevisionCategory::QE)),
    }
}

/// One input trace for the patterns stage.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceInput {
    pub trace_id: String,
    pub question: String,
    pub reasoning: String,
    pub truth_or_rubrics: TruthOrRubrics,
}

/// Classify many traces concurrently, preserving input order. Failures are
/// returned per trace.
pub async fn classify_traces(
    traces: &[TraceInput],
    backend: &dyn ChatBackend,
    concurrency: usize,
) -> Vec<Result<PatternReport, PatternError>> {
    stream::iter(traces.iter())
        .map(|t| {
            classify_patterns(
                &t.trace_id,
                &t.question,
                &t.reasoning,
                &t.truth_or_rubrics,
                backend,
            )
        })
        .buffered(concurrency.max(1))
        .collect()
        .await
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::scripted::{ScriptStep, ScriptedBackend};

    fn truth() -> TruthOrRubrics {
        TruthOrRubrics::GroundTruth("42".into())
    }

    fn empty_sections(except: &[(&str, &str)]) -> String {
        let mut parts = Vec::new();
        for kind in PatternKind::ALL {
            let body = except
                .iter()
                .find(|(k, _)| *k == kind.key())
                .map(|(_, v)| (*v).to_owned())
                .unwrap_or_else(|| r#"{"instances":[],"count":0}"#.to_owned());
            parts.push(format!(r#""{}":{}"#, kind.key(), body));
        }
        format!("{{{}}}", parts.join(","))
    }

    #[tokio::test]
    async fn classify_counts_instances_per_kind() {
        let reply = empty_sections(&[
            (
                "answer_verification",
                r#"{"instances":[
                    {"id":1,"content":"check A","contribution":"yes"},
                    {"id":2,"content":"check B","contribution":"no"}
                ],"count":2}"#,
            ),
            (
                "subgoal_setting",
                r#"{"instances":[{"id":1,"content":"step 1","contribution":"yes"}],"count":1}"#,
            ),
        ]);
        let backend = ScriptedBackend::builder()
            .judge(ScriptStep::reply(reply))
            .build();
        let report = classify_patterns("t1", "q", "reasoning", &truth(), &backend)
            .await
            .unwrap();
        assert_eq!(report.counts.answer_verification, 2);
        assert_eq!(report.counts.subgoal_setting, 1);
        assert_eq!(report.counts.backtracking, 0);
        assert_eq!(report.instances.len(), 3);
        assert!(report.warnings.is_empty());
    }

    #[tokio::test]
    async fn unknown_contribution_names_the_instance() {
        let reply = empty_sections(&[(
            "backtracking",
            r#"{"instances":[{"id":1,"content":"x","contribution":"maybe"}],"count":1}"#,
        )]);
        let backend = ScriptedBackend::builder()
            .judge(ScriptStep::reply(reply))
            .build();
        let err = classify_patterns("t1", "q", "reasoning", &truth(), &backend)
            .await
            .unwrap_err();
        match err {
            PatternError::UnknownContribution { kind, index, value } => {
                assert_eq!(kind, "backtracking");
                assert_eq!(index, 1);
                assert_eq!(value, "maybe");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[tokio::test]
    async fn all_empty_sections_is_a_valid_report() {
        let backend = ScriptedBackend::builder()
            .judge(ScriptStep::reply(empty_sections(&[])))
            .build();
        let report = classify_patterns("t1", "q", "reasoning", &truth(), &backend)
            .await
            .unwrap();
        assert_eq!(report.counts, PatternCounts::default());
        assert!(report.instances.is_empty());
    }

    #[tokio::test]
    async fn writing_variant_swaps_ground_truth_for_rubrics() {
        let backend = ScriptedBackend::builder()
            .judge(ScriptStep::reply_expecting(
                empty_sections(&[]),
                "Evaluation Rubrics: key point list",
            ))
            .build();
        classify_patterns(
            "t1",
            "q",
            "reasoning",
            &TruthOrRubrics::Rubrics("key point list".into()),
            &backend,
        )
        .await
        .unwrap();
    }

    fn instance(kind: PatternKind, contribution: Contribution) -> PatternInstance {
        PatternInstance {
            kind,
            content: String::new(),
            contribution,
        }
    }

    #[test]
    fn distribution_matches_hand_count() {
        // av: 3 yes + 1 no, sg: 4 na -> shares 0.5/0.5, helpful 0.75/absent.
        let report = PatternReport {
            trace_id: "t".into(),
            instances: vec![
                instance(PatternKind::AnswerVerification, Contribution::Yes),
                instance(PatternKind::AnswerVerification, Contribution::Yes),
                instance(PatternKind::AnswerVerification, Contribution::Yes),
                instance(PatternKind::AnswerVerification, Contribution::No),
                instance(PatternKind::SubgoalSetting, Contribution::Na),
                instance(PatternKind::SubgoalSetting, Contribution::Na),
                instance(PatternKind::SubgoalSetting, Contribution::Na),
                instance(PatternKind::SubgoalSetting, Contribution::Na),
            ],
            counts: PatternCounts::default(),
            warnings: Vec::new(),
        };
        let dist = pattern_distribution(&[report]);
        assert_eq!(dist.total_instances, 8);
        let av = &dist.kinds[0];
        assert_eq!(av.share, Some(0.5));
        assert_eq!(av.helpful, Some(0.75));
        let sg = &dist.kinds[2];
        assert_eq!(sg.share, Some(0.5));
        assert_eq!(sg.helpful, None);
        let bt = &dist.kinds[1];
        assert_eq!(bt.share, Some(0.0));
        assert_eq!(bt.helpful, None);
    }

    #[test]
    fn all_yes_makes_every_present_kind_fully_helpful() {
        let reports = vec![PatternReport {
            trace_id: "t".into(),
            instances: PatternKind::ALL
                .into_iter()
                .map(|k| instance(k, Contribution::Yes))
                .collect(),
            counts: PatternCounts::default(),
            warnings: Vec::new(),
        }];
        let dist = pattern_distribution(&reports);
        for kind in &dist.kinds {
            assert_eq!(kind.helpful, Some(1.0));
        }
    }

    #[test]
    fn helpfulness_ignores_duplicated_na_instances() {
        let base = vec![
            instance(PatternKind::Backtracking, Contribution::Yes),
            instance(PatternKind::Backtracking, Contribution::No),
            instance(PatternKind::Backtracking, Contribution::Na),
        ];
        let mut padded = base.clone();
        padded.extend((0..5).map(|_| instance(PatternKind::Backtracking, Contribution::Na)));
        let report = |instances: Vec<PatternInstance>| PatternReport {
            trace_id: "t".into(),
            counts: PatternCounts::from_instances(&instances),
            instances,
            warnings: Vec::new(),
        };
        let lean = pattern_distribution(&[report(base)]);
        let fat = pattern_distribution(&[report(padded)]);
        assert_eq!(lean.kinds[1].helpful, Some(0.5));
        assert_eq!(fat.kinds[1].helpful, Some(0.5));
    }

    #[test]
    fn empty_pool_serializes_with_absent_shares() {
        let dist = pattern_distribution(&[]);
        assert_eq!(dist.total_instances, 0);
        for kind in &dist.kinds {
            assert_eq!(kind.share, None);
            assert_eq!(kind.helpful, None);
        }
        serde_json::to_string(&dist).unwrap();
    }

    #[tokio::test]
    async fn revision_classification_parses_categories() {
        let reply = r#"{"patterns":[
            {"id":1,"content":"a","category":"QE","contribution":"depth"},
            {"id":2,"content":"b","category":"FLC","contribution":"fixed fact"},
            {"id":3,"content":"c","category":"QE","contribution":"flow"}
        ]}"#;
        let backend = ScriptedBackend::builder()
            .judge(ScriptStep::reply(reply))
            .build();
        let instances = classify_revisions("q", "reasoning", "rubrics", &backend)
            .await
            .unwrap();
        assert_eq!(instances.len(), 3);
        assert_eq!(instances[0].category, RevisionCategory::QE);
        assert_eq!(instances[1].contribution_note, "fixed fact");
    }

    #[tokio::test]
    async fn unknown_category_is_rejected() {
        let reply =
            r#"{"patterns":[{"id":1,"content":"a","category":"STYLE","contribution":"x"}]}"#;
        let backend = ScriptedBackend::builder()
            .judge(ScriptStep::reply(reply))
            .build();
        let err = classify_revisions("q", "reasoning", "rubrics", &backend)
            .await
            .unwrap_err();
        assert!(matches!(err, PatternError::RevisionParseFailure(_)));
    }

    #[tokio::test]
    async fn empty_patterns_array_is_fine() {
        let backend = ScriptedBackend::builder()
            .judge(ScriptStep::reply(r#"{"patterns":[]}"#))
            .build();
        let instances = classify_revisions("q", "reasoning", "rubrics", &backend)
            .await
            .unwrap();
        assert!(instances.is_empty());
    }

    #[test]
    fn revision_percentages_sum_to_one_hundred() {
        let mk = |cat| RevisionInstance {
            category: cat,
            content: String::new(),
            contribution_note: String::new(),
        };
        let dist = revision_distribution(&[
            mk(RevisionCategory::RA),
            mk(RevisionCategory::FLC),
            mk(RevisionCategory::QE),
            mk(RevisionCategory::QE),
        ]);
        assert_eq!(dist.ra.percent, Some(25.0));
        assert_eq!(dist.flc.percent, Some(25.0));
        assert_eq!(dist.qe.percent, Some(50.0));

        let empty = revision_distribution(&[]);
        assert_eq!(empty.ra.percent, None);
        assert_eq!(empty.total, 0);
    }
}
