//! Rubric generation and rubric-based answer scoring.
//!
//! Two rubric families drive the pipeline: query-specific key points graded
//! in {0, 0.5, 1} and general quality criteria graded in [0, 10]. Their
//! aggregated scores feed synthesis termination, difficulty ranking, and the
//! reward service.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::backend::json::{extract_json, JsonExtractError};
use crate::backend::{BackendError, ChatBackend, ChatRequest};
use crate::corpus::Query;
use crate::prompts;

/// Key-point score required before synthesis stops refining.
pub const DEFAULT_TARGET_KEYPOINTS: f64 = 1.0;
/// Quality score required before synthesis stops refining.
pub const DEFAULT_TARGET_QUALITY: f64 = 8.0;

/// One query-specific key point with its grading standard.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyPointRubric {
    pub id: u32,
    pub key_point: String,
    pub score_standards: String,
}

/// One general quality dimension.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QualityCriterion {
    pub name: String,
    pub description: String,
}

/// The full rubric set for one query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RubricSet {
    pub query_id: String,
    pub key_points: Vec<KeyPointRubric>,
    pub quality: Vec<QualityCriterion>,
}

impl RubricSet {
    /// Both families must be non-empty and key-point ids contiguous from 1
    /// before scoring is permitted.
    pub fn validate(&self) -> Result<(), RubricError> {
        if self.key_points.is_empty() {
            return Err(RubricError::MalformedRubrics("empty key-point list".into()));
        }
        if self.quality.is_empty() {
            return Err(RubricError::MalformedRubrics(
                "empty quality-criteria list".into(),
            ));
        }
        for (i, kp) in self.key_points.iter().enumerate() {
            if kp.id as usize != i + 1 {
                return Err(RubricError::MalformedRubrics(format!(
                    "key-point ids must be contiguous from 1; entry {} has id {}",
                    i + 1,
                    kp.id
                )));
            }
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form, for output provenance.
    pub fn checksum(&self) -> String {
        let json = serde_json::to_string(self).expect("rubric set serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    /// Key points rendered as the JSON block scoring prompts embed.
    pub fn key_points_block(&self) -> String {
        serde_json::to_string_pretty(&self.key_points).expect("key points serialize")
    }

    /// Quality criteria rendered as a numbered list.
    pub fn quality_block(&self) -> String {
        criteria_block(&self.quality)
    }

    /// Whole set rendered for prompts that take one `{rubrics}` slot.
    pub fn combined_block(&self) -> String {
        format!(
            "Query-specific key points:\n{}\n\nGeneral quality criteria:\n{}",
            self.key_points_block(),
            self.quality_block()
        )
    }
}

/// Numbered `name: description` lines for `{criteria}` slots.
pub fn criteria_block(criteria: &[QualityCriterion]) -> String {
    if criteria.is_empty() {
        return "(no additional criteria provided)".to_owned();
    }
    criteria
        .iter()
        .enumerate()
        .map(|(i, c)| format!("{}. {}: {}", i + 1, c.name, c.description))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Judge scores for one answer: per-key-point grades, per-criterion grades,
/// their exact means, and the judge's prose critique per family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub keypoint_scores: Vec<f64>,
    pub quality_scores: Vec<f64>,
    pub s_kp: f64,
    pub s_quality: f64,
    pub feedback_keypoints: String,
    pub feedback_quality: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl EvaluationReport {
    pub fn from_scores(
        keypoint_scores: Vec<f64>,
        quality_scores: Vec<f64>,
        feedback_keypoints: String,
        feedback_quality: String,
        warnings: Vec<String>,
    ) -> Self {
        let s_kp = mean(&keypoint_scores);
        let s_quality = mean(&quality_scores);
        Self {
            keypoint_scores,
            quality_scores,
            s_kp,
            s_quality,
            feedback_keypoints,
            feedback_quality,
            warnings,
        }
    }

    /// Both critiques joined, for consumers that want one feedback blob.
    pub fn feedback(&self) -> String {
        format!(
            "Quality critique: {}\nKey-point critique: {}",
            self.feedback_quality, self.feedback_keypoints
        )
    }

    pub fn has_feedback(&self) -> bool {
        !self.feedback_keypoints.trim().is_empty() || !self.feedback_quality.trim().is_empty()
    }
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// Score thresholds that terminate refinement, one per rubric family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreTargets {
    pub key_points: f64,
    pub quality: f64,
}

impl Default for ScoreTargets {
    fn default() -> Self {
        Self {
            key_points: DEFAULT_TARGET_KEYPOINTS,
            quality: DEFAULT_TARGET_QUALITY,
        }
    }
}

/// True iff both family means reach their targets.
pub fn meets_target(report: &EvaluationReport, targets: ScoreTargets) -> bool {
    report.s_kp >= targets.key_points && report.s_quality >= targets.quality
}

/// Scalarization used for difficulty gaps and accept-if-improved gating:
/// both families normalized to weight one, so the range is [0, 2].
pub fn combined_score(report: &EvaluationReport) -> f64 {
    report.s_kp + report.s_quality / 10.0
}

#[derive(Debug, Error)]
pub enum RubricError {
    #[error("malformed rubrics: {0}")]
    MalformedRubrics(String),
    #[error("score parse failure: {0}")]
    ScoreParseFailure(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

/// Generated key points plus any guidance warnings.
#[derive(Debug, Clone)]
pub struct GeneratedKeyPoints {
    pub key_points: Vec<KeyPointRubric>,
    pub warnings: Vec<String>,
}

/// Generated quality criteria plus any guidance warnings.
#[derive(Debug, Clone)]
pub struct GeneratedCriteria {
    pub criteria: Vec<QualityCriterion>,
    pub warnings: Vec<String>,
}

/// Ask the judge for query-specific key-point rubrics.
pub async fn generate_keypoint_rubrics(
    query: &Query,
    backend: &dyn ChatBackend,
) -> Result<GeneratedKeyPoints, RubricError> {
    let prompt = prompts::render(prompts::RUBRIC_KEYPOINTS, &[("query", &query.full_text())]);
    let reply = backend.complete(ChatRequest::judge(&prompt)).await?;
    let value = extract_json(&reply.text).map_err(malformed)?;
    let Some(entries) = value.get("rubrics").and_then(|v| v.as_array()) else {
        return Err(RubricError::MalformedRubrics(
            "reply lacks a `rubrics` array".into(),
        ));
    };
    if entries.is_empty() {
        return Err(RubricError::MalformedRubrics(
            "empty `rubrics` array".into(),
        ));
    }
    let mut key_points = Vec::with_capacity(entries.len());
    for (i, entry) in entries.iter().enumerate() {
        let id = entry
            .get("id")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| entry_error(i, "id"))? as u32;
        let key_point = entry
            .get("key_point")
            .and_then(|v| v.as_str())
            .ok_or_else(|| entry_error(i, "key_point"))?
            .to_owned();
        let score_standards = entry
            .get("score_standards")
            .and_then(|v| v.as_str())
            .ok_or_else(|| entry_error(i, "score_standards"))?
            .to_owned();
        if id as usize != i + 1 {
            return Err(RubricError::MalformedRubrics(format!(
                "entry {}: ids must be contiguous from 1, got {id}",
                i + 1
            )));
        }
        key_points.push(KeyPointRubric {
            id,
            key_point,
            score_standards,
        });
    }
    let mut warnings = Vec::new();
    if !(5..=10).contains(&key_points.len()) {
        warnings.push(format!(
            "generated {} key points, outside the 5-10 guidance",
            key_points.len()
        ));
    }
    Ok(GeneratedKeyPoints {
        key_points,
        warnings,
    })
}

/// Ask the judge for task-adapted general quality criteria.
pub async fn generate_quality_criteria(
    query: &Query,
    backend: &dyn ChatBackend,
) -> Result<GeneratedCriteria, RubricError> {
    let prompt = prompts::render(prompts::RUBRIC_CRITERIA, &[("query", &query.full_text())]);
    let reply = backend.complete(ChatRequest::judge(&prompt)).await?;
    let value = extract_json(&reply.text).map_err(malformed)?;
    let Some(entries) = value.get("EVAL_CRITERIA").and_then(|v| v.as_array()) else {
        return Err(RubricError::MalformedRubrics(
            "reply lacks an `EVAL_CRITERIA` array".into(),
        ));
    };
    if entries.is_empty() {
        return Err(RubricError::MalformedRubrics(
            "empty `EVAL_CRITERIA` array".into(),
        ));
    }
    let mut criteria = Vec::with_capacity(entries.len());
    for (i, entry) in entries.iter().enumerate() {
        let name = entry
            .get("name")
            .and_then(|v| v.as_str())
            .ok_or_else(|| entry_error(i, "name"))?
            .to_owned();
        let description = entry
            .get("description")
            .and_then(|v| v.as_str())
            .ok_or_else(|| entry_error(i, "description"))?
            .to_owned();
        criteria.push(QualityCriterion { name, description });
    }
    let mut warnings = Vec::new();
    if !(6..=8).contains(&criteria.len()) {
        warnings.push(format!(
            "generated {} criteria, outside the 6-8 guidance",
            criteria.len()
        ));
    }
    Ok(GeneratedCriteria { criteria, warnings })
}

/// Judge an answer against both rubric families: one call per family,
/// grades clamped to their legal ranges, means computed exactly.
pub async fn score_answer(
    query: &Query,
    answer: &str,
    rubrics: &RubricSet,
    backend: &dyn ChatBackend,
) -> Result<EvaluationReport, RubricError> {
    rubrics.validate()?;
    let question = query.full_text();
    let mut warnings = Vec::new();

    let kp_prompt = prompts::render(
        prompts::SCORE_KEYPOINTS,
        &[
            ("question", question.as_str()),
            ("answer", answer),
            ("rubrics", &rubrics.key_points_block()),
        ],
    );
    let kp_reply = backend.complete(ChatRequest::judge(&kp_prompt)).await?;
    let (kp_scores, kp_feedback) =
        parse_keypoint_scores(&kp_reply.text, rubrics.key_points.len(), &mut warnings)?;

    let quality_prompt = prompts::render(
        prompts::SCORE_QUALITY,
        &[
            ("question", question.as_str()),
            ("answer", answer),
            ("criteria", &rubrics.quality_block()),
        ],
    );
    let quality_reply = backend
        .complete(ChatRequest::judge(&quality_prompt))
        .await?;
    let (quality_scores, quality_feedback) =
        parse_quality_scores(&quality_reply.text, rubrics.quality.len(), &mut warnings)?;

    Ok(EvaluationReport::from_scores(
        kp_scores,
        quality_scores,
        kp_feedback,
        quality_feedback,
        warnings,
    ))
}

fn parse_keypoint_scores(
    reply: &str,
    expected: usize,
    warnings: &mut Vec<String>,
) -> Result<(Vec<f64>, String), RubricError> {
    let value = extract_json(reply).map_err(score_parse)?;
    let (raw, feedback) = scores_and_feedback(&value, expected, "id")?;
    let mut scores = Vec::with_capacity(raw.len());
    for (i, s) in raw.into_iter().enumerate() {
        let clamped = clamp_keypoint(s);
        if clamped != s {
            warnings.push(format!(
                "key point {}: grade {s} clamped to {clamped}",
                i + 1
            ));
        }
        scores.push(clamped);
    }
    Ok((scores, feedback))
}

fn parse_quality_scores(
    reply: &str,
    expected: usize,
    warnings: &mut Vec<String>,
) -> Result<(Vec<f64>, String), RubricError> {
    let value = extract_json(reply).map_err(score_parse)?;
    let (raw, feedback) = scores_and_feedback(&value, expected, "name")?;
    let mut scores = Vec::with_capacity(raw.len());
    for (i, s) in raw.into_iter().enumerate() {
        let clamped = s.clamp(0.0, 10.0);
        if clamped != s {
            warnings.push(format!(
                "criterion {}: grade {s} clamped to {clamped}",
                i + 1
            ));
        }
        scores.push(clamped);
    }
    Ok((scores, feedback))
}

// Shared shape of both scoring replies: a `scores` array and a `feedback`
// string. Keypoint entries are keyed by id and reordered; quality entries
// are taken positionally.
fn scores_and_feedback(
    value: &serde_json::Value,
    expected: usize,
    key_field: &str,
) -> Result<(Vec<f64>, String), RubricError> {
    let Some(entries) = value.get("scores").and_then(|v| v.as_array()) else {
        return Err(RubricError::ScoreParseFailure(
            "reply lacks a `scores` array".into(),
        ));
    };
    if entries.len() != expected {
        return Err(RubricError::ScoreParseFailure(format!(
            "expected {expected} scores, judge returned {}",
            entries.len()
        )));
    }
    let mut raw: Vec<(u64, f64)> = Vec::with_capacity(entries.len());
    for (i, entry) in entries.iter().enumerate() {
        let score = entry.get("score").and_then(|v| v.as_f64()).ok_or_else(|| {
            RubricError::ScoreParseFailure(format!("entry {}: missing numeric `score`", i + 1))
        })?;
        let key = if key_field == "id" {
            entry.get("id").and_then(|v| v.as_u64()).ok_or_else(|| {
                RubricError::ScoreParseFailure(format!("entry {}: missing `id`", i + 1))
            })?
        } else {
            i as u64 + 1
        };
        raw.push((key, score));
    }
    if key_field == "id" {
        raw.sort_by_key(|(id, _)| *id);
        let ids: Vec<u64> = raw.iter().map(|(id, _)| *id).collect();
        let want: Vec<u64> = (1..=expected as u64).collect();
        if ids != want {
            return Err(RubricError::ScoreParseFailure(format!(
                "score ids {ids:?} do not cover 1..={expected}"
            )));
        }
    }
    let feedback = value
        .get("feedback")
        .and_then(|v| v.as_str())
        .unwrap_or_default()
        .to_owned();
    Ok((raw.into_iter().map(|(_, s)| s).collect(), feedback))
}

// Nearest legal grade in {0, 0.5, 1}; ties round up.
fn clamp_keypoint(score: f64) -> f64 {
    (score.clamp(0.0, 1.0) * 2.0).round() / 2.0
}

fn malformed(e: JsonExtractError) -> RubricError {
    RubricError::MalformedRubrics(e.to_string())
}

fn score_parse(e: JsonExtractError) -> RubricError {
    RubricError::ScoreParseFailure(e.to_string())
}

fn entry_error(index: usize, field: &str) -> RubricError {
    RubricError::MalformedRubrics(format!("entry {}: missing `{field}`", index + 1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::scripted::{ScriptStep, ScriptedBackend};
    use crate::corpus::TaskKind;

    fn query() -> Query {
        Query::new(
            "q1",
            "Write a short fable about a lighthouse keeper.",
            TaskKind::Creative,
        )
    }

    fn rubric_set(kp: usize, quality: usize) -> RubricSet {
        RubricSet {
            query_id: "q1".into(),
            key_points: (1..=kp as u32)
                .map(|id| KeyPointRubric {
                    id,
                    key_point: format!("point {id}"),
                    score_standards: "Fully correct: +1.".into(),
                })
                .collect(),
            quality: (0..quality)
                .map(|i| QualityCriterion {
                    name: format!("Criterion{i}"),
                    description: "A strong answer should: 1) be strong.".into(),
                })
                .collect(),
        }
    }

    #[tokio::test]
    async fn keypoint_generation_parses_valid_reply() {
        let reply = r#"{"rubrics":[
            {"id":1,"key_point":"has a keeper","score_standards":"s1"},
            {"id":2,"key_point":"has a lighthouse","score_standards":"s2"},
            {"id":3,"key_point":"reads as a fable","score_standards":"s3"}
        ]}"#;
        let backend = ScriptedBackend::builder()
            .judge(ScriptStep::reply_expecting(reply, "lighthouse keeper"))
            .build();
        let out = generate_keypoint_rubrics(&query(), &backend).await.unwrap();
        assert_eq!(out.key_points.len(), 3);
        assert_eq!(out.key_points[1].key_point, "has a lighthouse");
        assert_eq!(out.key_points[2].score_standards, "s3");
        // 3 is outside the 5-10 guidance.
        assert_eq!(out.warnings.len(), 1);
    }

    #[tokio::test]
    async fn keypoint_generation_rejects_missing_field() {
        let reply = r#"{"rubrics":[
            {"id":1,"key_point":"a","score_standards":"s"},
            {"id":2,"key_point":"b"}
        ]}"#;
        let backend = ScriptedBackend::builder()
            .judge(ScriptStep::reply(reply))
            .build();
        let err = generate_keypoint_rubrics(&query(), &backend)
            .await
            .unwrap_err();
        assert!(err.to_string().contains("entry 2"), "{err}");
        assert!(err.to_string().contains("score_standards"), "{err}");
    }

    #[tokio::test]
    async fn keypoint_generation_rejects_gapped_ids() {
        let reply = r#"{"rubrics":[
            {"id":1,"key_point":"a","score_standards":"s"},
            {"id":3,"key_point":"b","score_standards":"s"}
        ]}"#;
        let backend = ScriptedBackend::builder()
            .judge(ScriptStep::reply(reply))
            .build();
        let err = generate_keypoint_rubrics(&query(), &backend)
            .await
            .unwrap_err();
        assert!(err.to_string().contains("contiguous"), "{err}");
    }

    #[tokio::test]
    async fn criteria_generation_preserves_names_and_warns_out_of_band() {
        let seven: Vec<String> = (0..7)
            .map(|i| format!(r#"{{"name":"C{i}","description":"A strong answer should: 1) x."}}"#))
            .collect();
        let reply = format!(r#"{{"EVAL_CRITERIA":[{}]}}"#, seven.join(","));
        let backend = ScriptedBackend::builder()
            .judge(ScriptStep::reply(reply))
            .build();
        let out = generate_quality_criteria(&query(), &backend).await.unwrap();
        assert_eq!(out.criteria.len(), 7);
        assert_eq!(out.criteria[3].name, "C3");
        assert!(out.warnings.is_empty());

        let two = r#"{"EVAL_CRITERIA":[
            {"name":"A","description":"d"},{"name":"B","description":"d"}
        ]}"#;
        let backend = ScriptedBackend::builder()
            .judge(ScriptStep::reply(two))
            .build();
        let out = generate_quality_criteria(&query(), &backend).await.unwrap();
        assert_eq!(out.criteria.len(), 2);
        assert_eq!(out.warnings.len(), 1);
    }

    #[tokio::test]
    async fn criteria_generation_rejects_empty_array() {
        let backend = ScriptedBackend::builder()
            .judge(ScriptStep::reply(r#"{"EVAL_CRITERIA":[]}"#))
            .build();
        let err = generate_quality_criteria(&query(), &backend)
            .await
            .unwrap_err();
        assert!(matches!(err, RubricError::MalformedRubrics(_)));
    }

    #[tokio::test]
    async fn score_answer_computes_exact_means() {
        let rubrics = rubric_set(3, 6);
        let kp = r#"{"scores":[{"id":1,"score":1},{"id":2,"score":0.5},{"id":3,"score":0}],"feedback":"kp critique"}"#;
        let quality = r#"{"scores":[
            {"name":"a","score":8},{"name":"b","score":8},{"name":"c","score":8},
            {"name":"d","score":8},{"name":"e","score":8},{"name":"f","score":8}
        ],"feedback":"quality critique"}"#;
        let backend = ScriptedBackend::builder()
            .judge(ScriptStep::reply_expecting(kp, "[Evaluation Rubrics]"))
            .judge(ScriptStep::reply_expecting(
                quality,
                "[Evaluation Criteria]",
            ))
            .build();
        let report = score_answer(&query(), "answer text", &rubrics, &backend)
            .await
            .unwrap();
        assert_eq!(report.s_kp, 0.5);
        assert_eq!(report.s_quality, 8.0);
        assert_eq!(report.feedback_keypoints, "kp critique");
        assert_eq!(report.feedback_quality, "quality critique");
        assert!(report.warnings.is_empty());
        assert!(report.has_feedback());
    }

    #[tokio::test]
    async fn out_of_range_keypoint_grade_clamps_with_warning() {
        let rubrics = rubric_set(1, 1);
        let kp = r#"{"scores":[{"id":1,"score":0.7}],"feedback":"f"}"#;
        let quality = r#"{"scores":[{"name":"a","score":12}],"feedback":"f"}"#;
        let backend = ScriptedBackend::builder()
            .judge(ScriptStep::reply(kp))
            .judge(ScriptStep::reply(quality))
            .build();
        let report = score_answer(&query(), "x", &rubrics, &backend)
            .await
            .unwrap();
        assert_eq!(report.keypoint_scores, vec![0.5]);
        assert_eq!(report.quality_scores, vec![10.0]);
        assert_eq!(report.warnings.len(), 2);
    }

    #[tokio::test]
    async fn score_count_mismatch_is_parse_failure() {
        let rubrics = rubric_set(3, 1);
        let kp = r#"{"scores":[{"id":1,"score":1}],"feedback":"f"}"#;
        let backend = ScriptedBackend::builder()
            .judge(ScriptStep::reply(kp))
            .build();
        let err = score_answer(&query(), "x", &rubrics, &backend)
            .await
            .unwrap_err();
        assert!(matches!(err, RubricError::ScoreParseFailure(_)));
    }

    #[test]
    fn clamp_keypoint_rounds_to_nearest_legal_grade() {
        assert_eq!(clamp_keypoint(0.7), 0.5);
        assert_eq!(clamp_keypoint(0.9), 1.0);
        assert_eq!(clamp_keypoint(-0.3), 0.0);
        assert_eq!(clamp_keypoint(2.0), 1.0);
        assert_eq!(clamp_keypoint(0.25), 0.5);
        assert_eq!(clamp_keypoint(0.5), 0.5);
    }

    #[test]
    fn meets_target_is_a_strict_conjunction() {
        let report = |kp: f64, q: f64| EvaluationReport {
            keypoint_scores: vec![kp],
            quality_scores: vec![q],
            s_kp: kp,
            s_quality: q,
            feedback_keypoints: String::new(),
            feedback_quality: String::new(),
            warnings: Vec::new(),
        };
        let targets = ScoreTargets::default();
        assert!(meets_target(&report(1.0, 8.0), targets));
        assert!(!meets_target(&report(1.0, 7.9), targets));
        assert!(!meets_target(&report(0.99, 10.0), targets));
    }

    #[test]
    fn combined_score_spans_zero_to_two() {
        let report = |kp: f64, q: f64| EvaluationReport {
            keypoint_scores: vec![kp],
            quality_scores: vec![q],
            s_kp: kp,
            s_quality: q,
            feedback_keypoints: String::new(),
            feedback_quality: String::new(),
            warnings: Vec::new(),
        };
        assert_eq!(combined_score(&report(1.0, 10.0)), 2.0);
        assert_eq!(combined_score(&report(0.0, 0.0)), 0.0);
        assert!((combined_score(&report(0.5, 6.0)) - 1.1).abs() < 1e-12);
    }

    #[test]
    fn rubric_set_validation_catches_bad_shapes() {
        let ok = rubric_set(2, 2);
        ok.validate().unwrap();
        let mut empty_quality = ok.clone();
        empty_quality.quality.clear();
        assert!(empty_quality.validate().is_err());
        let mut gapped = ok;
        gapped.key_points[1].id = 5;
        assert!(gapped.validate().is_err());
    }

    #[test]
    fn checksum_tracks_content() {
        let a = rubric_set(2, 2);
        let mut b = a.clone();
        assert_eq!(a.checksum(), b.checksum());
        b.key_points[0].key_point = "changed".into();
        assert_ne!(a.checksum(), b.checksum());
    }
}
