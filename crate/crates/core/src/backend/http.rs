//! Live HTTP client speaking the OpenAI-compatible chat-completions protocol.

use std::sync::atomic::{AtomicU64, Ordering};

use async_trait::async_trait;
use serde::Deserialize;
use serde_json::json;
use tokio::sync::Semaphore;

use super::{
    with_retries, AttemptError, BackendConfig, BackendError, ChatBackend, ChatRequest,
    ChatResponse, InFlightGauge, Speaker, TokenUsage,
};

/// One live backend endpoint. Retries transient failures (HTTP 429/5xx,
/// timeouts) with exponential backoff and never exceeds `max_in_flight`
/// concurrent live requests.
pub struct HttpBackend {
    config: BackendConfig,
    client: reqwest::Client,
    limiter: Semaphore,
    gauge: InFlightGauge,
    calls: AtomicU64,
}

impl HttpBackend {
    pub fn new(config: BackendConfig) -> Self {
        Self {
            limiter: Semaphore::new(config.max_in_flight.max(1)),
            config,
            client: reqwest::Client::new(),
            gauge: InFlightGauge::default(),
            calls: AtomicU64::new(0),
        }
    }

    pub fn gauge(&self) -> &InFlightGauge {
        &self.gauge
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }

    fn url(&self) -> String {
        format!(
            "{}/chat/completions",
            self.config.endpoint.trim_end_matches('/')
        )
    }

    fn api_key(&self) -> Result<Option<String>, BackendError> {
        let var = self.config.api_key_env.trim();
        if var.is_empty() {
            return Ok(None);
        }
        match std::env::var(var) {
            Ok(key) if !key.is_empty() => Ok(Some(key)),
            _ => Err(BackendError::Auth(format!(
                "environment variable {var} is not set"
            ))),
        }
    }

    async fn one_attempt(
        &self,
        body: &serde_json::Value,
        api_key: Option<&str>,
    ) -> Result<ChatResponse, AttemptError> {
        // The permit is held only for the live request, so a request backing
        // off between retries does not occupy a window slot.
        let _permit = self
            .limiter
            .acquire()
            .await
            .expect("in-flight semaphore closed");
        let _in_flight = self.gauge.enter();

        let mut builder = self
            .client
            .post(self.url())
            .timeout(self.config.timeout)
            .json(body);
        if let Some(key) = api_key {
            builder = builder.bearer_auth(key);
        }
        let response = match builder.send().await {
            Ok(r) => r,
            Err(e) => return Err(AttemptError::Retryable(format!("transport: {e}"))),
        };

        let status = response.status();
        if status == reqwest::StatusCode::UNAUTHORIZED || status == reqwest::StatusCode::FORBIDDEN {
            return Err(AttemptError::Fatal(BackendError::Auth(format!(
                "endpoint rejected credentials with HTTP {status}"
            ))));
        }
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(AttemptError::Retryable(format!("HTTP {status}")));
        }
        if !status.is_success() {
            return Err(AttemptError::Fatal(BackendError::MalformedResponse(
                format!("endpoint rejected request with HTTP {status}"),
            )));
        }

        let text = match response.text().await {
            Ok(t) => t,
            Err(e) => return Err(AttemptError::Retryable(format!("body read: {e}"))),
        };
        let wire: WireResponse = match serde_json::from_str(&text) {
            Ok(w) => w,
            Err(e) => {
                return Err(AttemptError::Fatal(BackendError::MalformedResponse(
                    format!(
                        "{e}; body starts {:?}",
                        text.chars().take(120).collect::<String>()
                    ),
                )))
            }
        };
        let Some(choice) = wire.choices.into_iter().next() else {
            return Err(AttemptError::Fatal(BackendError::MalformedResponse(
                "reply carries no choices".into(),
            )));
        };
        Ok(ChatResponse {
            text: choice.message.content.unwrap_or_default(),
            usage: TokenUsage {
                prompt_tokens: wire.usage.prompt_tokens,
                completion_tokens: wire.usage.completion_tokens,
            },
            backend_id: wire.model.unwrap_or_else(|| self.config.model_name.clone()),
        })
    }
}

#[async_trait]
impl ChatBackend for HttpBackend {
    async fn complete(&self, request: ChatRequest) -> Result<ChatResponse, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let api_key = self.api_key()?;
        let body = request_body(&self.config.model_name, &request);
        with_retries(self.config.retry, |_| {
            self.one_attempt(&body, api_key.as_deref())
        })
        .await
    }
}

fn request_body(model: &str, request: &ChatRequest) -> serde_json::Value {
    let messages: Vec<serde_json::Value> = request
        .messages
        .iter()
        .map(|m| {
            let role = match m.speaker {
                Speaker::System => "system",
                Speaker::User => "user",
                Speaker::Assistant => "assistant",
            };
            json!({ "role": role, "content": m.text })
        })
        .collect();
    json!({
        "model": model,
        "messages": messages,
        "temperature": request.sampling.temperature,
        "max_tokens": request.sampling.max_tokens,
    })
}

#[derive(Debug, Deserialize)]
struct WireResponse {
    #[serde(default)]
    model: Option<String>,
    #[serde(default)]
    choices: Vec<WireChoice>,
    #[serde(default)]
    usage: WireUsage,
}

#[derive(Debug, Deserialize)]
struct WireChoice {
    message: WireMessage,
}

#[derive(Debug, Deserialize)]
struct WireMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
struct WireUsage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}
