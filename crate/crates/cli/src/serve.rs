//! Reward HTTP service: the endpoint an external RL trainer calls during
//! rollouts. `POST /v1/reward` takes the same JSON one batch line uses and
//! returns the same record JSON batch mode writes.

use std::sync::Arc;

use anyhow::{Context, Result};
use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde_json::json;

use redraft_core::backend::DynBackend;
use redraft_core::reward::{reward_one, RewardConfig, RewardRequest};

use crate::jsonl::RunMeta;

pub struct ServeState {
    pub backend: DynBackend,
    pub reward_config: RewardConfig,
    pub meta: RunMeta,
}

pub fn router(state: Arc<ServeState>) -> Router {
    Router::new()
        .route("/v1/reward", post(reward_handler))
        .route("/healthz", get(healthz))
        .with_state(state)
}

pub async fn serve(addr: &str, state: Arc<ServeState>) -> Result<()> {
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .with_context(|| format!("binding {addr}"))?;
    println!("reward service listening on http://{addr}");
    axum::serve(listener, router(state)).await?;
    Ok(())
}

async fn healthz(State(state): State<Arc<ServeState>>) -> Json<serde_json::Value> {
    Json(json!({
        "status": "ok",
        "version": state.meta.tool_version,
        "config_checksum": state.meta.config_checksum,
        "prompt_checksum": state.meta.prompt_checksum,
    }))
}

async fn reward_handler(State(state): State<Arc<ServeState>>, body: Bytes) -> Response {
    // serde_path_to_error names the offending field in 400 responses.
    let deserializer = &mut serde_json::Deserializer::from_slice(&body);
    let request: RewardRequest = match serde_path_to_error::deserialize(deserializer) {
        Ok(request) => request,
        Err(e) => {
            let message = format!("invalid request body at `{}`: {}", e.path(), e.inner());
            return (StatusCode::BAD_REQUEST, Json(json!({ "error": message }))).into_response();
        }
    };
    let record = reward_one(&request, &state.reward_config, state.backend.as_ref()).await;
    (StatusCode::OK, Json(record)).into_response()
}
