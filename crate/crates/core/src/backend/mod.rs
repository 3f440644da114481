//! Uniform model-call abstraction shared by every pipeline stage.
//!
//! Two logical roles (writer, judge) map to independently configured
//! backends. The live implementation speaks the OpenAI-compatible
//! chat-completions wire protocol; the scripted implementations replay
//! deterministic replies so control flow and formulas are testable offline.

pub mod http;
pub mod json;
pub mod scripted;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Which logical model a call targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoleTag {
    Writer,
    Judge,
}

impl RoleTag {
    pub fn as_str(self) -> &'static str {
        match self {
            RoleTag::Writer => "writer",
            RoleTag::Judge => "judge",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Speaker {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub speaker: Speaker,
    pub text: String,
}

/// Per-call sampling settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingParams {
    pub temperature: f64,
    pub max_tokens: u32,
}

impl SamplingParams {
    /// Writer default: temperature 0.6, 32K-token budget.
    pub fn writer_default() -> Self {
        Self {
            temperature: 0.6,
            max_tokens: 32_768,
        }
    }

    /// Judge default: temperature 0 for deterministic grading.
    pub fn judge_default() -> Self {
        Self {
            temperature: 0.0,
            max_tokens: 8_192,
        }
    }
}

/// One chat-completion request to a logical role.
#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    pub role_tag: RoleTag,
    pub messages: Vec<ChatMessage>,
    pub sampling: SamplingParams,
}

impl ChatRequest {
    /// Writer call with an optional system preamble.
    pub fn writer(system: Option<&str>, user: &str) -> Self {
        let mut messages = Vec::new();
        if let Some(s) = system {
            messages.push(ChatMessage {
                speaker: Speaker::System,
                text: s.to_owned(),
            });
        }
        messages.push(ChatMessage {
            speaker: Speaker::User,
            text: user.to_owned(),
        });
        Self {
            role_tag: RoleTag::Writer,
            messages,
            sampling: SamplingParams::writer_default(),
        }
    }

    /// Judge call: a single user message at temperature 0.
    pub fn judge(user: &str) -> Self {
        Self {
            role_tag: RoleTag::Judge,
            messages: vec![ChatMessage {
                speaker: Speaker::User,
                text: user.to_owned(),
            }],
            sampling: SamplingParams::judge_default(),
        }
    }

    /// All message text joined, used for script matching and token counts.
    pub fn joined_text(&self) -> String {
        self.messages
            .iter()
            .map(|m| m.text.as_str())
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

/// The model's reply text plus usage accounting.
#[derive(Debug, Clone, PartialEq)]
pub struct ChatResponse {
    pub text: String,
    pub usage: TokenUsage,
    pub backend_id: String,
}

/// Retry settings for transient transport failures.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub backoff_base: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            backoff_base: Duration::from_millis(250),
        }
    }
}

/// Connection settings for one live backend role.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BackendConfig {
    /// Base URL; `/chat/completions` is appended.
    pub endpoint: String,
    /// Name of the environment variable holding the API key; empty when the
    /// endpoint needs no auth.
    pub api_key_env: String,
    pub model_name: String,
    pub max_in_flight: usize,
    pub retry: RetryPolicy,
    pub timeout: Duration,
}

impl BackendConfig {
    pub fn new(endpoint: impl Into<String>, model_name: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            api_key_env: String::new(),
            model_name: model_name.into(),
            max_in_flight: 8,
            retry: RetryPolicy::default(),
            timeout: Duration::from_secs(120),
        }
    }
}

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("auth failure: {0}")]
    Auth(String),
    #[error("retries exhausted after {attempts} attempt(s): {last}")]
    ExhaustedRetries { attempts: u32, last: String },
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("script exhausted for {role} at call index {index}")]
    ScriptExhausted { role: &'static str, index: u64 },
    #[error(
        "script mismatch for {role} at call index {index}: prompt does not contain {expected:?}"
    )]
    ScriptMismatch {
        role: &'static str,
        index: u64,
        expected: String,
    },
    #[error("no script rule matched a {role} request starting {snippet:?}")]
    NoRuleMatched { role: &'static str, snippet: String },
}

/// Anything that can answer chat requests for both logical roles.
#[async_trait]
pub trait ChatBackend: Send + Sync {
    async fn complete(&self, request: ChatRequest) -> Result<ChatResponse, BackendError>;
}

pub type DynBackend = Arc<dyn ChatBackend>;

/// Routes writer and judge calls to independently configured backends.
pub struct SplitBackend {
    pub writer: DynBackend,
    pub judge: DynBackend,
}

#[async_trait]
impl ChatBackend for SplitBackend {
    async fn complete(&self, request: ChatRequest) -> Result<ChatResponse, BackendError> {
        match request.role_tag {
            RoleTag::Writer => self.writer.complete(request).await,
            RoleTag::Judge => self.judge.complete(request).await,
        }
    }
}

/// Rewrites every request's sampling settings to the configured per-role
/// values before dispatching to the inner backend.
pub struct SamplingOverride {
    inner: DynBackend,
    writer: SamplingParams,
    judge: SamplingParams,
}

impl SamplingOverride {
    pub fn new(inner: DynBackend, writer: SamplingParams, judge: SamplingParams) -> Self {
        Self {
            inner,
            writer,
            judge,
        }
    }
}

#[async_trait]
impl ChatBackend for SamplingOverride {
    async fn complete(&self, mut request: ChatRequest) -> Result<ChatResponse, BackendError> {
        request.sampling = match request.role_tag {
            RoleTag::Writer => self.writer,
            RoleTag::Judge => self.judge,
        };
        self.inner.complete(request).await
    }
}

/// Tracks current and peak in-flight requests.
#[derive(Debug, Default)]
pub struct InFlightGauge {
    current: AtomicUsize,
    peak: AtomicUsize,
}

impl InFlightGauge {
    pub fn enter(&self) -> GaugeGuard<'_> {
        let now = self.current.fetch_add(1, Ordering::SeqCst) + 1;
        self.peak.fetch_max(now, Ordering::SeqCst);
        GaugeGuard { gauge: self }
    }

    pub fn peak(&self) -> usize {
        self.peak.load(Ordering::SeqCst)
    }
}

pub struct GaugeGuard<'a> {
    gauge: &'a InFlightGauge,
}

impl Drop for GaugeGuard<'_> {
    fn drop(&mut self) {
        self.gauge.current.fetch_sub(1, Ordering::SeqCst);
    }
}

pub(crate) enum AttemptError {
    Retryable(String),
    Fatal(BackendError),
}

/// Shared retry loop: exponential backoff on retryable failures, immediate
/// return on fatal ones.
pub(crate) async fn with_retries<F, Fut>(
    policy: RetryPolicy,
    mut attempt: F,
) -> Result<ChatResponse, BackendError>
where
    F: FnMut(u32) -> Fut,
    Fut: std::future::Future<Output = Result<ChatResponse, AttemptError>>,
{
    let attempts = policy.max_attempts.max(1);
    let mut last = String::from("no attempt made");
    for n in 0..attempts {
        if n > 0 {
            let backoff = policy.backoff_base * 2u32.saturating_pow(n - 1);
            tokio::time::sleep(backoff).await;
        }
        match attempt(n).await {
            Ok(resp) => return Ok(resp),
            Err(AttemptError::Fatal(e)) => return Err(e),
            Err(AttemptError::Retryable(msg)) => last = msg,
        }
    }
    Err(BackendError::ExhaustedRetries { attempts, last })
}
