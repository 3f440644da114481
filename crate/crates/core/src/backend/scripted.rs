//! Deterministic scripted backends for offline tests and dry runs.
//!
//! [`ScriptedBackend`] replays per-role reply sequences keyed by a monotone
//! call index, with optional prompt assertions and failure injection, so
//! tests fail loudly when call order drifts. [`RuleBackend`] answers by
//! content matching instead, which keeps batch runs reproducible at any
//! concurrency. [`FnBackend`] wraps an arbitrary pure function for tests
//! that need reply logic.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};

use super::{
    with_retries, AttemptError, BackendError, ChatBackend, ChatRequest, ChatResponse, RetryPolicy,
    RoleTag, TokenUsage,
};
use crate::corpus::token_count;

#[derive(Debug, Clone)]
enum StepOutcome {
    Reply(String),
    Transient(String),
    Auth(String),
}

/// One scripted reply (or injected failure) in a role's call queue.
#[derive(Debug, Clone)]
pub struct ScriptStep {
    outcome: StepOutcome,
    expect_contains: Option<String>,
}

impl ScriptStep {
    pub fn reply(text: impl Into<String>) -> Self {
        Self {
            outcome: StepOutcome::Reply(text.into()),
            expect_contains: None,
        }
    }

    /// Reply that also asserts the prompt contains `substring`.
    pub fn reply_expecting(text: impl Into<String>, substring: impl Into<String>) -> Self {
        Self {
            outcome: StepOutcome::Reply(text.into()),
            expect_contains: Some(substring.into()),
        }
    }

    /// Injected transient failure; consumed by one retry attempt.
    pub fn fail_transient(message: impl Into<String>) -> Self {
        Self {
            outcome: StepOutcome::Transient(message.into()),
            expect_contains: None,
        }
    }

    /// Injected fatal auth failure.
    pub fn fail_auth(message: impl Into<String>) -> Self {
        Self {
            outcome: StepOutcome::Auth(message.into()),
            expect_contains: None,
        }
    }
}

#[derive(Debug, Default)]
struct RoleCounters {
    calls: AtomicU64,
    attempts: AtomicU64,
}

/// Sequence-keyed scripted backend; each retry attempt consumes one step.
pub struct ScriptedBackend {
    writer: Mutex<VecDeque<ScriptStep>>,
    judge: Mutex<VecDeque<ScriptStep>>,
    writer_counters: RoleCounters,
    judge_counters: RoleCounters,
    consumed_writer: AtomicU64,
    consumed_judge: AtomicU64,
    retry: RetryPolicy,
}

impl ScriptedBackend {
    pub fn builder() -> ScriptedBackendBuilder {
        ScriptedBackendBuilder::default()
    }

    fn queue(&self, role: RoleTag) -> &Mutex<VecDeque<ScriptStep>> {
        match role {
            RoleTag::Writer => &self.writer,
            RoleTag::Judge => &self.judge,
        }
    }

    fn counters(&self, role: RoleTag) -> &RoleCounters {
        match role {
            RoleTag::Writer => &self.writer_counters,
            RoleTag::Judge => &self.judge_counters,
        }
    }

    fn consumed(&self, role: RoleTag) -> &AtomicU64 {
        match role {
            RoleTag::Writer => &self.consumed_writer,
            RoleTag::Judge => &self.consumed_judge,
        }
    }

    /// Completed `complete` invocations for a role.
    pub fn calls(&self, role: RoleTag) -> u64 {
        self.counters(role).calls.load(Ordering::SeqCst)
    }

    /// Script steps consumed for a role, one per attempt.
    pub fn attempts(&self, role: RoleTag) -> u64 {
        self.counters(role).attempts.load(Ordering::SeqCst)
    }

    /// Steps left unconsumed; tests assert zero to prove the script ran dry.
    pub fn remaining(&self, role: RoleTag) -> usize {
        self.queue(role).lock().unwrap().len()
    }
}

#[async_trait]
impl ChatBackend for ScriptedBackend {
    async fn complete(&self, request: ChatRequest) -> Result<ChatResponse, BackendError> {
        let role = request.role_tag;
        self.counters(role).calls.fetch_add(1, Ordering::SeqCst);
        let result = with_retries(self.retry, |_| {
            let request = &request;
            async move {
                let step = self.queue(role).lock().unwrap().pop_front();
                let index = self.consumed(role).fetch_add(1, Ordering::SeqCst);
                self.counters(role).attempts.fetch_add(1, Ordering::SeqCst);
                let Some(step) = step else {
                    return Err(AttemptError::Fatal(BackendError::ScriptExhausted {
                        role: role.as_str(),
                        index,
                    }));
                };
                if let Some(expected) = &step.expect_contains {
                    if !request.joined_text().contains(expected) {
                        return Err(AttemptError::Fatal(BackendError::ScriptMismatch {
                            role: role.as_str(),
                            index,
                            expected: expected.clone(),
                        }));
                    }
                }
                match step.outcome {
                    StepOutcome::Reply(text) => Ok(scripted_response(role, request, text)),
                    StepOutcome::Transient(msg) => Err(AttemptError::Retryable(msg)),
                    StepOutcome::Auth(msg) => Err(AttemptError::Fatal(BackendError::Auth(msg))),
                }
            }
        })
        .await;
        result
    }
}

#[derive(Default)]
pub struct ScriptedBackendBuilder {
    writer: VecDeque<ScriptStep>,
    judge: VecDeque<ScriptStep>,
    retry: Option<RetryPolicy>,
}

impl ScriptedBackendBuilder {
    pub fn writer(mut self, step: ScriptStep) -> Self {
        self.writer.push_back(step);
        self
    }

    pub fn judge(mut self, step: ScriptStep) -> Self {
        self.judge.push_back(step);
        self
    }

    pub fn retry(mut self, policy: RetryPolicy) -> Self {
        self.retry = Some(policy);
        self
    }

    pub fn build(self) -> ScriptedBackend {
        ScriptedBackend {
            writer: Mutex::new(self.writer),
            judge: Mutex::new(self.judge),
            writer_counters: RoleCounters::default(),
            judge_counters: RoleCounters::default(),
            consumed_writer: AtomicU64::new(0),
            consumed_judge: AtomicU64::new(0),
            // Backoff of 1ms keeps retry tests fast without a mock clock.
            retry: self.retry.unwrap_or(RetryPolicy {
                max_attempts: 1,
                backoff_base: std::time::Duration::from_millis(1),
            }),
        }
    }
}

fn scripted_response(role: RoleTag, request: &ChatRequest, text: String) -> ChatResponse {
    let usage = TokenUsage {
        prompt_tokens: token_count(&request.joined_text()) as u64,
        completion_tokens: token_count(&text) as u64,
    };
    ChatResponse {
        text,
        usage,
        backend_id: format!("scripted:{}", role.as_str()),
    }
}

/// One content-matching rule; the first rule whose role and substrings all
/// match the request wins.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScriptRule {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub role: Option<RoleTag>,
    #[serde(default)]
    pub contains: Vec<String>,
    pub reply: String,
}

/// JSON script file: `{ "rules": [ ... ] }`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScriptFile {
    pub rules: Vec<ScriptRule>,
}

/// Content-keyed scripted backend. Replies are a pure function of the
/// request, so runs are byte-reproducible at any in-flight window.
pub struct RuleBackend {
    rules: Vec<ScriptRule>,
    writer_calls: AtomicU64,
    judge_calls: AtomicU64,
}

impl RuleBackend {
    pub fn new(rules: Vec<ScriptRule>) -> Self {
        Self {
            rules,
            writer_calls: AtomicU64::new(0),
            judge_calls: AtomicU64::new(0),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        let file: ScriptFile = serde_json::from_str(text)?;
        Ok(Self::new(file.rules))
    }

    pub fn calls(&self, role: RoleTag) -> u64 {
        match role {
            RoleTag::Writer => self.writer_calls.load(Ordering::SeqCst),
            RoleTag::Judge => self.judge_calls.load(Ordering::SeqCst),
        }
    }
}

#[async_trait]
impl ChatBackend for RuleBackend {
    async fn complete(&self, request: ChatRequest) -> Result<ChatResponse, BackendError> {
        let counter = match request.role_tag {
            RoleTag::Writer => &self.writer_calls,
            RoleTag::Judge => &self.judge_calls,
        };
        counter.fetch_add(1, Ordering::SeqCst);
        let text = request.joined_text();
        let hit = self.rules.iter().find(|rule| {
            rule.role.is_none_or(|r| r == request.role_tag)
                && rule.contains.iter().all(|c| text.contains(c.as_str()))
        });
        match hit {
            Some(rule) => Ok(scripted_response(
                request.role_tag,
                &request,
                rule.reply.clone(),
            )),
            None => Err(BackendError::NoRuleMatched {
                role: request.role_tag.as_str(),
                snippet: text.chars().take(80).collect(),
            }),
        }
    }
}

type ReplyFn = dyn Fn(&ChatRequest) -> Result<String, BackendError> + Send + Sync;

/// Backend computing replies with an arbitrary pure function.
pub struct FnBackend {
    reply: Box<ReplyFn>,
}

impl FnBackend {
    pub fn new<F>(reply: F) -> Self
    where
        F: Fn(&ChatRequest) -> Result<String, BackendError> + Send + Sync + 'static,
    {
        Self {
            reply: Box::new(reply),
        }
    }
}

#[async_trait]
impl ChatBackend for FnBackend {
    async fn complete(&self, request: ChatRequest) -> Result<ChatResponse, BackendError> {
        let text = (self.reply)(&request)?;
        Ok(scripted_response(request.role_tag, &request, text))
    }
}
