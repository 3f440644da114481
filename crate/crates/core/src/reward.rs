//! RL reward computation: pairwise answer reward, segment-level process
//! reward, and their gated combination.
//!
//! The total reward is `alpha * r_a + (1 - alpha) * r_p` only when the
//! answer reward is positive; a losing answer scores zero outright and the
//! process side is never evaluated, so well-structured reasoning around a
//! bad answer earns nothing. With no reflection segments the total falls
//! back to the answer reward alone: averaging over zero segments is
//! undefined, and forcing `r_p = 0` would penalize answers that had nothing
//! to fix.

use futures::stream::{self, StreamExt};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::backend::json::{extract_json, JsonExtractError};
use crate::backend::{BackendError, ChatBackend, ChatRequest};
use crate::corpus::Query;
use crate::prompts;
use crate::rubric::{criteria_block, QualityCriterion, RubricSet};
use crate::synthesis::{parse_sample, SynthesisError};

/// Weight of the answer reward in the gated combination.
pub const DEFAULT_ALPHA: f64 = 0.25;

/// One verification excerpt extracted from a thinking trace.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReflectionSegment {
    pub id: u32,
    pub content: String,
}

/// Three-dimensional judgment of one reflection segment. The segment reward
/// is +1 only when all three dimensions pass, else -1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentJudgment {
    pub segment_id: u32,
    pub r_find: i8,
    pub r_rev: i8,
    pub r_align: i8,
    pub r_p: i8,
}

impl SegmentJudgment {
    pub fn new(segment_id: u32, r_find: i8, r_rev: i8, r_align: i8) -> Self {
        let r_p = if r_find > 0 && r_rev > 0 && r_align > 0 {
            1
        } else {
            -1
        };
        Self {
            segment_id,
            r_find,
            r_rev,
            r_align,
            r_p,
        }
    }
}

/// The assembled reward triple.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TotalReward {
    pub r_a: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_p: Option<f64>,
    pub r_all: f64,
    pub alpha: f64,
    pub k_segments: usize,
}

/// Which pairwise slot the candidate answer occupied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Slot {
    A,
    B,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictToken {
    A,
    B,
    C,
}

/// Outcome of one pairwise answer comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerVerdict {
    pub r_a: f64,
    pub candidate_slot: Slot,
    pub verdict: VerdictToken,
    pub reasks: u32,
}

#[derive(Debug, Error)]
pub enum RewardError {
    #[error("usage error: {0}")]
    Usage(String),
    #[error("verdict parse failure: {0}")]
    VerdictParseFailure(String),
    #[error("extraction parse failure: {0}")]
    ExtractionParseFailure(String),
    #[error("judgment parse failure: {0}")]
    JudgmentParseFailure(String),
    #[error("judgment count mismatch: {judged} judgments for {segments} segments")]
    CountMismatch { judged: usize, segments: usize },
    #[error("empty judgment list; apply the zero-segment rule instead")]
    EmptyJudgments,
    #[error("sample parse failure: {0}")]
    SampleParseFailure(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

/// Deterministic slot assignment for the candidate answer, derived from the
/// seed and the query id so every item flips its own coin.
pub fn candidate_slot(seed: u64, query_id: &str) -> Slot {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(query_id.as_bytes());
    if hasher.finalize()[0] & 1 == 0 {
        Slot::A
    } else {
        Slot::B
    }
}

/// Pairwise comparison of the candidate against the reference answer.
///
/// The candidate is assigned to slot A or B by a seeded coin flip (recorded
/// in the result); the judge's last `[[A]]`/`[[B]]`/`[[C]]` token is mapped
/// back through the slot assignment. A reply with no verdict token is asked
/// once more before failing.
pub async fn answer_reward(
    query: &Query,
    answer: &str,
    reference: &str,
    criteria: &[QualityCriterion],
    backend: &dyn ChatBackend,
    seed: u64,
) -> Result<AnswerVerdict, RewardError> {
    if reference.trim().is_empty() {
        return Err(RewardError::Usage(
            "answer reward requires a non-empty reference answer".into(),
        ));
    }
    let slot = candidate_slot(seed, &query.id);
    let (answer_a, answer_b) = match slot {
        Slot::A => (answer, reference),
        Slot::B => (reference, answer),
    };
    let prompt = prompts::render(
        prompts::ANSWER_REWARD,
        &[
            ("criteria", &criteria_block(criteria)),
            ("question", query.full_text().as_str()),
            ("answer_a", answer_a),
            ("answer_b", answer_b),
        ],
    );

    let mut reasks = 0;
    loop {
        let reply = backend.complete(ChatRequest::judge(&prompt)).await?;
        match last_verdict_token(&reply.text) {
            Some(verdict) => {
                let r_a = match (verdict, slot) {
                    (VerdictToken::C, _) => 0.5,
                    (VerdictToken::A, Slot::A) | (VerdictToken::B, Slot::B) => 1.0,
                    _ => 0.0,
                };
                return Ok(AnswerVerdict {
                    r_a,
                    candidate_slot: slot,
                    verdict,
                    reasks,
                });
            }
            None if reasks == 0 => reasks += 1,
            None => {
                return Err(RewardError::VerdictParseFailure(format!(
                    "no [[A]]/[[B]]/[[C]] token after {} asks; reply starts {:?}",
                    reasks + 1,
                    reply.text.chars().take(80).collect::<String>()
                )))
            }
        }
    }
}

// Judge prose precedes the verdict, so the last token wins.
fn last_verdict_token(reply: &str) -> Option<VerdictToken> {
    let mut found = None;
    for (pos, token) in [
        (reply.rfind("[[A]]"), VerdictToken::A),
        (reply.rfind("[[B]]"), VerdictToken::B),
        (reply.rfind("[[C]]"), VerdictToken::C),
    ] {
        if let Some(p) = pos {
            match found {
                Some((best, _)) if best >= p => {}
                _ => found = Some((p, token)),
            }
        }
    }
    found.map(|(_, t)| t)
}

/// Extract all verification segments from a thinking trace. Empty thinking
/// yields an empty list without touching the backend.
pub async fn extract_segments(
    thinking: &str,
    query: &Query,
    final_answer: &str,
    backend: &dyn ChatBackend,
) -> Result<(Vec<ReflectionSegment>, Vec<String>), RewardError> {
    if thinking.trim().is_empty() {
        return Ok((Vec::new(), Vec::new()));
    }
    let prompt = prompts::render(
        prompts::SEGMENT_EXTRACT,
        &[
            ("query", query.full_text().as_str()),
            ("thinking_process", thinking),
            ("final_answer", final_answer),
        ],
    );
    let reply = backend.complete(ChatRequest::judge(&prompt)).await?;
    let value = extract_json(&reply.text).map_err(extraction)?;
    let Some(entries) = value.get("verifications").and_then(|v| v.as_array()) else {
        return Err(RewardError::ExtractionParseFailure(
            "reply lacks a `verifications` array".into(),
        ));
    };
    let mut segments = Vec::with_capacity(entries.len());
    for (i, entry) in entries.iter().enumerate() {
        let content = entry
            .get("content")
            .and_then(|v| v.as_str())
            .ok_or_else(|| {
                RewardError::ExtractionParseFailure(format!(
                    "verification {}: missing `content`",
                    i + 1
                ))
            })?
            .to_owned();
        segments.push(ReflectionSegment {
            id: i as u32 + 1,
            content,
        });
    }
    let mut warnings = Vec::new();
    if let Some(total) = value.get("total_count").and_then(|v| v.as_u64()) {
        if total as usize != segments.len() {
            warnings.push(format!(
                "total_count {} disagrees with {} extracted verifications; trusting the list",
                total,
                segments.len()
            ));
        }
    }
    Ok((segments, warnings))
}

/// Judge every segment along the three dimensions in one call.
///
/// A dimension-2 grade of 0 is the judge's gated "not evaluated" marker for
/// segments whose issue already failed; it is stored as -1, which leaves the
/// segment reward unchanged since dimension 1 already fails the conjunction.
pub async fn judge_segments(
    segments: &[ReflectionSegment],
    query: &Query,
    final_answer: &str,
    rubrics: &RubricSet,
    backend: &dyn ChatBackend,
) -> Result<Vec<SegmentJudgment>, RewardError> {
    if segments.is_empty() {
        return Err(RewardError::Usage(
            "judge_segments requires at least one segment".into(),
        ));
    }
    let verifications = serde_json::to_string_pretty(segments).expect("segments serialize");
    let prompt = prompts::render(
        prompts::SEGMENT_JUDGE,
        &[
            ("query", query.full_text().as_str()),
            ("final_answer", final_answer),
            ("rubrics", &rubrics.combined_block()),
            ("verifications", &verifications),
        ],
    );
    let reply = backend.complete(ChatRequest::judge(&prompt)).await?;
    let value = extract_json(&reply.text).map_err(judgment)?;
    let Some(entries) = value.get("judgments").and_then(|v| v.as_array()) else {
        return Err(RewardError::JudgmentParseFailure(
            "reply lacks a `judgments` array".into(),
        ));
    };
    if entries.len() != segments.len() {
        return Err(RewardError::CountMismatch {
            judged: entries.len(),
            segments: segments.len(),
        });
    }
    let mut judgments = Vec::with_capacity(entries.len());
    for (i, entry) in entries.iter().enumerate() {
        let dim = |field: &str| -> Result<i64, RewardError> {
            entry.get(field).and_then(|v| v.as_i64()).ok_or_else(|| {
                RewardError::JudgmentParseFailure(format!(
                    "judgment {}: missing integer `{field}`",
                    i + 1
                ))
            })
        };
        let find = dim("issue_validity")?;
        let rev = dim("revision_quality")?;
        let align = dim("implementation")?;
        if !matches!(find, -1 | 1) || !matches!(align, -1 | 1) {
            return Err(RewardError::JudgmentParseFailure(format!(
                "judgment {}: dimensions must be -1 or +1, got find={find} align={align}",
                i + 1
            )));
        }
        let rev = match rev {
            -1 | 1 => rev,
            0 if find <= 0 => -1,
            other => {
                return Err(RewardError::JudgmentParseFailure(format!(
                    "judgment {}: revision_quality {other} is only legal as a gated 0 \
                     when issue_validity fails",
                    i + 1
                )))
            }
        };
        judgments.push(SegmentJudgment::new(
            segments[i].id,
            find as i8,
            rev as i8,
            align as i8,
        ));
    }
    Ok(judgments)
}

/// Mean of per-segment rewards.
pub fn process_reward(judgments: &[SegmentJudgment]) -> Result<f64, RewardError> {
    if judgments.is_empty() {
        return Err(RewardError::EmptyJudgments);
    }
    let sum: i64 = judgments.iter().map(|j| j.r_p as i64).sum();
    Ok(sum as f64 / judgments.len() as f64)
}

/// Apply the gate and the alpha-mix.
///
/// `alpha` must lie in (0, 1).
pub fn total_reward(r_a: f64, judgments: &[SegmentJudgment], alpha: f64) -> TotalReward {
    debug_assert!(alpha > 0.0 && alpha < 1.0, "alpha must lie in (0, 1)");
    let k_segments = judgments.len();
    let r_p = (k_segments > 0).then(|| {
        let sum: i64 = judgments.iter().map(|j| j.r_p as i64).sum();
        sum as f64 / k_segments as f64
    });
    let r_all = if r_a <= 0.0 {
        0.0
    } else {
        match r_p {
            Some(p) => alpha * r_a + (1.0 - alpha) * p,
            None => r_a,
        }
    };
    TotalReward {
        r_a,
        r_p,
        r_all,
        alpha,
        k_segments,
    }
}

/// Reward parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardConfig {
    pub alpha: f64,
    pub seed: u64,
    /// Reference-free fallback: grade the candidate alone against the
    /// quality criteria and map the scalar grade onto {0, 0.5, 1}.
    #[serde(default)]
    pub pointwise: bool,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            seed: 0,
            pointwise: false,
        }
    }
}

/// Full audit trail of one reward computation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardAudit {
    pub candidate_slot: Slot,
    pub verdict: VerdictToken,
    pub reasks: u32,
    pub segments: Vec<ReflectionSegment>,
    pub judgments: Vec<SegmentJudgment>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// Reward plus audit for one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardOutcome {
    pub reward: TotalReward,
    pub audit: RewardAudit,
}

/// Score one assembled `<think>/<answer>` sample end to end.
///
/// The process side (segment extraction and judging) runs only when the
/// answer reward is positive.
pub async fn reward_sample(
    sample: &str,
    query: &Query,
    reference: &str,
    rubrics: &RubricSet,
    config: &RewardConfig,
    backend: &dyn ChatBackend,
) -> Result<RewardOutcome, RewardError> {
    let (thinking, answer) = parse_sample(sample).map_err(|e| match e {
        SynthesisError::SampleParse(msg) => RewardError::SampleParseFailure(msg),
        other => RewardError::SampleParseFailure(other.to_string()),
    })?;

    let verdict = if config.pointwise {
        pointwise_answer_reward(query, &answer, &rubrics.quality, backend).await?
    } else {
        answer_reward(
            query,
            &answer,
            reference,
            &rubrics.quality,
            backend,
            config.seed,
        )
        .await?
    };

    let mut segments = Vec::new();
    let mut judgments = Vec::new();
    let mut warnings = Vec::new();
    if verdict.r_a > 0.0 {
        let (found, extract_warnings) =
            extract_segments(&thinking, query, &answer, backend).await?;
        warnings.extend(extract_warnings);
        segments = found;
        if !segments.is_empty() {
            judgments = judge_segments(&segments, query, &answer, rubrics, backend).await?;
        }
    }

    let reward = total_reward(verdict.r_a, &judgments, config.alpha);
    Ok(RewardOutcome {
        reward,
        audit: RewardAudit {
            candidate_slot: verdict.candidate_slot,
            verdict: verdict.verdict,
            reasks: verdict.reasks,
            segments,
            judgments,
            warnings,
        },
    })
}

// Untested convenience for the pointwise baseline: one quality grading of
// the candidate alone, mean grade mapped onto the pairwise scale.
async fn pointwise_answer_reward(
    query: &Query,
    answer: &str,
    criteria: &[QualityCriterion],
    backend: &dyn ChatBackend,
) -> Result<AnswerVerdict, RewardError> {
    let prompt = prompts::render(
        prompts::SCORE_QUALITY,
        &[
            ("question", query.full_text().as_str()),
            ("answer", answer),
            ("criteria", &criteria_block(criteria)),
        ],
    );
    let reply = backend.complete(ChatRequest::judge(&prompt)).await?;
    let value =
        extract_json(&reply.text).map_err(|e| RewardError::VerdictParseFailure(e.to_string()))?;
    let scores: Vec<f64> = value
        .get("scores")
        .and_then(|v| v.as_array())
        .map(|entries| {
            entries
                .iter()
                .filter_map(|e| e.get("score").and_then(|s| s.as_f64()))
                .map(|s| s.clamp(0.0, 10.0))
                .collect()
        })
        .unwrap_or_default();
    if scores.is_empty() {
        return Err(RewardError::VerdictParseFailure(
            "pointwise reply lacks numeric scores".into(),
        ));
    }
    let mean = scores.iter().sum::<f64>() / scores.len() as f64;
    let (r_a, verdict) = if mean >= 8.0 {
        (1.0, VerdictToken::A)
    } else if mean >= 6.0 {
        (0.5, VerdictToken::C)
    } else {
        (0.0, VerdictToken::B)
    };
    Ok(AnswerVerdict {
        r_a,
        candidate_slot: Slot::A,
        verdict,
        reasks: 0,
    })
}

/// One item of a reward batch; mirrors the HTTP request schema.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RewardRequest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub query: Query,
    pub sample: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rubrics: Option<RubricSet>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
}

/// One output line of a reward batch; also the HTTP response schema.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RewardRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub query_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reward: Option<TotalReward>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audit: Option<RewardAudit>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Score one batch item, folding any failure into the record.
pub async fn reward_one(
    request: &RewardRequest,
    config: &RewardConfig,
    backend: &dyn ChatBackend,
) -> RewardRecord {
    let reference = request
        .reference
        .clone()
        .or_else(|| request.query.reference.clone())
        .unwrap_or_default();
    let rubrics = request.rubrics.clone().unwrap_or_else(|| RubricSet {
        query_id: request.query.id.clone(),
        key_points: Vec::new(),
        quality: Vec::new(),
    });
    let config = RewardConfig {
        alpha: request.alpha.unwrap_or(config.alpha),
        ..*config
    };
    let base = RewardRecord {
        id: request.id.clone(),
        query_id: request.query.id.clone(),
        reward: None,
        audit: None,
        error: None,
    };
    if !config.pointwise && reference.trim().is_empty() {
        return RewardRecord {
            error: Some("missing reference answer".into()),
            ..base
        };
    }
    if !(config.alpha > 0.0 && config.alpha < 1.0) {
        return RewardRecord {
            error: Some(format!("alpha {} outside (0, 1)", config.alpha)),
            ..base
        };
    }
    match reward_sample(
        &request.sample,
        &request.query,
        &reference,
        &rubrics,
        &config,
        backend,
    )
    .await
    {
        Ok(outcome) => RewardRecord {
            reward: Some(outcome.reward),
            audit: Some(outcome.audit),
            ..base
        },
        Err(e) => RewardRecord {
            error: Some(e.to_string()),
            ..base
        },
    }
}

/// Reward a whole batch concurrently. Output order equals input order and
/// per-item failures never abort the batch.
pub async fn batch_reward(
    requests: &[RewardRequest],
    config: &RewardConfig,
    backend: &dyn ChatBackend,
    concurrency: usize,
) -> Vec<RewardRecord> {
    stream::iter(requests.iter())
        .map(|request| reward_one(request, config, backend))
        .buffered(concurrency.max(1))
        .collect()
        .await
}

fn extraction(e: JsonExtractError) -> RewardError {
    RewardError::ExtractionParseFailure(e.to_string())
}

fn judgment(e: JsonExtractError) -> RewardError {
    RewardError::JudgmentParseFailure(e.to_string())
}
