//! Iterative writer-judge synthesis: draft, score, reflect, revise, and
//! assemble the final `<think>/<answer>` training sample.
//!
//! A revision is retained only when its combined score strictly improves on
//! the best accepted score so far; rejected drafts are discarded entirely
//! and the previous score and feedback stay authoritative. Refinement stops
//! once both score targets are met or `max_turns` refinement iterations have
//! run.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::json::strip_code_fences;
use crate::backend::{BackendError, ChatBackend, ChatRequest};
use crate::corpus::Query;
use crate::prompts;
use crate::rubric::{
    combined_score, meets_target, score_answer, EvaluationReport, RubricError, RubricSet,
    ScoreTargets,
};

/// Maximum refinement iterations after the initial draft.
pub const DEFAULT_MAX_TURNS: u32 = 3;
/// Separator joining thinking segments in the assembled sample.
pub const DEFAULT_SEPARATOR: &str = "\n\n";

/// Synthesis knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisConfig {
    pub max_turns: u32,
    pub targets: ScoreTargets,
    pub separator: String,
    /// Extra judge asks allowed per scoring call when a reply fails to parse.
    pub judge_reasks: u32,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        Self {
            max_turns: DEFAULT_MAX_TURNS,
            targets: ScoreTargets::default(),
            separator: DEFAULT_SEPARATOR.to_owned(),
            judge_reasks: 1,
        }
    }
}

/// One accepted step of the loop. Turn 0 carries the writer's native
/// thinking and no reflection; later turns carry a reflection and no
/// thinking.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub index: u32,
    pub reflection: String,
    pub thinking: String,
    pub answer: String,
    pub report: EvaluationReport,
    pub accepted: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    TargetMet,
    MaxTurns,
    JudgeFailure,
}

/// The accepted turn history and its assembled training sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub query_id: String,
    pub turns: Vec<Turn>,
    pub rejected_count: u32,
    pub final_answer: String,
    pub sample: String,
    pub stop_reason: StopReason,
}

#[derive(Debug, Error)]
pub enum SynthesisError {
    #[error("writer returned an empty draft")]
    EmptyDraft,
    #[error("usage error: {0}")]
    Usage(String),
    #[error("cannot assemble a sample with no accepted turns")]
    NoAcceptedTurns,
    #[error("sample parse failure: {0}")]
    SampleParse(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

/// One writer call producing the initial thinking and answer. The reply is
/// split on the writer's native `<think>...</think>` convention; without a
/// think block the whole reply is the answer.
pub async fn initial_draft(
    query: &Query,
    backend: &dyn ChatBackend,
) -> Result<(String, String), SynthesisError> {
    let request = ChatRequest::writer(Some(prompts::DRAFT_SYSTEM.trim()), &query.full_text());
    let reply = backend.complete(request).await?;
    if reply.text.trim().is_empty() {
        return Err(SynthesisError::EmptyDraft);
    }
    Ok(split_think(&reply.text))
}

fn split_think(reply: &str) -> (String, String) {
    if let Some(open) = reply.find("<think>") {
        if let Some(close) = reply[open..].find("</think>") {
            let thinking = reply[open + "<think>".len()..open + close]
                .trim()
                .to_owned();
            let mut answer = String::new();
            answer.push_str(&reply[..open]);
            answer.push_str(&reply[open + close + "</think>".len()..]);
            return (thinking, answer.trim().to_owned());
        }
    }
    (String::new(), reply.trim().to_owned())
}

/// Render the self-reflection prompt from the previous answer and its
/// judge report; returns the writer's internal monologue verbatim.
pub async fn reflect(
    query: &Query,
    prev_answer: &str,
    report: &EvaluationReport,
    backend: &dyn ChatBackend,
) -> Result<String, SynthesisError> {
    if !report.has_feedback() {
        return Err(SynthesisError::Usage(
            "reflection requires non-empty judge feedback".into(),
        ));
    }
    let prompt = prompts::render(
        prompts::REFLECT,
        &[
            ("question", query.full_text().as_str()),
            ("original_article", prev_answer),
            ("feedback_quality", &report.feedback_quality),
            ("feedback_kpr", &report.feedback_keypoints),
        ],
    );
    let reply = backend.complete(ChatRequest::writer(None, &prompt)).await?;
    if reply.text.trim().is_empty() {
        return Err(SynthesisError::EmptyDraft);
    }
    Ok(reply.text)
}

/// Produce the revised article conditioned on the reflection. Markdown
/// fences around the reply are stripped.
pub async fn revise(
    query: &Query,
    prev_answer: &str,
    reflection: &str,
    report: &EvaluationReport,
    backend: &dyn ChatBackend,
) -> Result<String, SynthesisError> {
    if reflection.trim().is_empty() {
        return Err(SynthesisError::Usage(
            "revision requires a non-empty reflection".into(),
        ));
    }
    let prompt = prompts::render(
        prompts::REVISE,
        &[
            ("question", query.full_text().as_str()),
            ("original_article", prev_answer),
            ("feedback_quality", &report.feedback_quality),
            ("feedback_kpr", &report.feedback_keypoints),
            ("self_reflection", reflection),
        ],
    );
    let reply = backend.complete(ChatRequest::writer(None, &prompt)).await?;
    let text = strip_code_fences(&reply.text).to_owned();
    if text.is_empty() {
        return Err(SynthesisError::EmptyDraft);
    }
    Ok(text)
}

/// Run the full loop for one query and assemble the trajectory.
///
/// Judge failures terminate the loop early: the trajectory keeps whatever
/// turns were accepted and reports `stop_reason = judge_failure`.
pub async fn synthesize(
    query: &Query,
    rubrics: &RubricSet,
    config: &SynthesisConfig,
    backend: &dyn ChatBackend,
) -> Result<Trajectory, SynthesisError> {
    rubrics
        .validate()
        .map_err(|e| SynthesisError::Usage(e.to_string()))?;

    let (thinking, answer) = initial_draft(query, backend).await?;
    let Some(report) = score_with_reasks(query, &answer, rubrics, config, backend).await? else {
        return Ok(Trajectory {
            query_id: query.id.clone(),
            turns: Vec::new(),
            rejected_count: 0,
            final_answer: String::new(),
            sample: String::new(),
            stop_reason: StopReason::JudgeFailure,
        });
    };

    let mut turns = vec![Turn {
        index: 0,
        reflection: String::new(),
        thinking,
        answer,
        report,
        accepted: true,
    }];
    let mut rejected_count = 0u32;
    let mut best_score = combined_score(&turns[0].report);
    let mut judge_failed = false;

    let mut turn_index = 1;
    while turn_index <= config.max_turns
        && !meets_target(&turns.last().expect("turn 0 exists").report, config.targets)
    {
        // Rejected drafts are discarded: reflect and revise always start
        // from the last accepted answer and its report.
        let current = turns.last().expect("turn 0 exists");
        let prev_answer = current.answer.clone();
        let prev_report = current.report.clone();

        let reflection = reflect(query, &prev_answer, &prev_report, backend).await?;
        let revised = revise(query, &prev_answer, &reflection, &prev_report, backend).await?;
        let Some(report) = score_with_reasks(query, &revised, rubrics, config, backend).await?
        else {
            judge_failed = true;
            break;
        };

        if combined_score(&report) > best_score {
            best_score = combined_score(&report);
            turns.push(Turn {
                index: turn_index,
                reflection,
                thinking: String::new(),
                answer: revised,
                report,
                accepted: true,
            });
        } else {
            rejected_count += 1;
        }
        turn_index += 1;
    }

    let stop_reason = if judge_failed {
        StopReason::JudgeFailure
    } else if meets_target(&turns.last().expect("turn 0 exists").report, config.targets) {
        StopReason::TargetMet
    } else {
        StopReason::MaxTurns
    };

    let sample = assemble(&turns, config)?;
    let final_answer = turns.last().expect("turn 0 exists").answer.clone();
    Ok(Trajectory {
        query_id: query.id.clone(),
        turns,
        rejected_count,
        final_answer,
        sample,
        stop_reason,
    })
}

// Ok(None) signals an unrecoverable judge failure after the re-ask budget.
async fn score_with_reasks(
    query: &Query,
    answer: &str,
    rubrics: &RubricSet,
    config: &SynthesisConfig,
    backend: &dyn ChatBackend,
) -> Result<Option<EvaluationReport>, SynthesisError> {
    let mut asks = 0;
    loop {
        match score_answer(query, answer, rubrics, backend).await {
            Ok(report) => return Ok(Some(report)),
            Err(RubricError::ScoreParseFailure(_)) if asks < config.judge_reasks => asks += 1,
            Err(_) => return Ok(None),
        }
    }
}

/// Assemble the training sample from accepted turns:
/// thinking of turn 0, its answer, then each accepted reflection, joined by
/// the separator inside `<think>`; the final accepted answer inside
/// `<answer>`. Intermediate revised answers never enter the think block.
pub fn assemble(turns: &[Turn], config: &SynthesisConfig) -> Result<String, SynthesisError> {
    let accepted: Vec<&Turn> = turns.iter().filter(|t| t.accepted).collect();
    let Some(first) = accepted.first() else {
        return Err(SynthesisError::NoAcceptedTurns);
    };
    let mut parts: Vec<&str> = Vec::with_capacity(accepted.len() + 1);
    if !first.thinking.is_empty() {
        parts.push(&first.thinking);
    }
    parts.push(&first.answer);
    for turn in &accepted[1..] {
        parts.push(&turn.reflection);
    }
    let think = parts.join(&config.separator);
    let final_answer = &accepted.last().expect("non-empty").answer;
    Ok(format!(
        "<think>{think}</think><answer>{final_answer}</answer>"
    ))
}

/// Split an assembled sample back into its think and answer blocks.
pub fn parse_sample(sample: &str) -> Result<(String, String), SynthesisError> {
    let open_think = sample
        .find("<think>")
        .ok_or_else(|| SynthesisError::SampleParse("missing <think>".into()))?;
    let close_think = sample
        .find("</think>")
        .ok_or_else(|| SynthesisError::SampleParse("missing </think>".into()))?;
    let open_answer = sample
        .find("<answer>")
        .ok_or_else(|| SynthesisError::SampleParse("missing <answer>".into()))?;
    let close_answer = sample
        .rfind("</answer>")
        .ok_or_else(|| SynthesisError::SampleParse("missing </answer>".into()))?;
    if !(open_think < close_think && close_think < open_answer && open_answer < close_answer) {
        return Err(SynthesisError::SampleParse("blocks out of order".into()));
    }
    Ok((
        sample[open_think + "<think>".len()..close_think].to_owned(),
        sample[open_answer + "<answer>".len()..close_answer].to_owned(),
    ))
}
