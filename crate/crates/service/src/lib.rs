//! HTTP scoring service: `POST /score/text` and `GET /healthz` over one
//! immutable model snapshot.

use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use claimspot::corpus::Label;
use claimspot::scoring::Scorer;
use serde::{Deserialize, Serialize};

/// Largest accepted request body.
pub const MAX_BODY_BYTES: usize = 64 * 1024;
pub const DEFAULT_PORT: u16 = 8080;

/// One sentence or several.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InputText {
    One(String),
    Many(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub input_text: InputText,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredSentence {
    pub text: String,
    pub score: f64,
    pub label: Label,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub checkpoint_id: String,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub results: Vec<ScoredSentence>,
    pub model: ModelInfo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelInfo>,
}

type Shared = Option<Arc<Scorer>>;

fn info(scorer: &Scorer) -> ModelInfo {
    ModelInfo {
        checkpoint_id: scorer.checkpoint_id().to_owned(),
        config_hash: scorer.config_hash().to_owned(),
    }
}

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(serde_json::json!({ "error": message.into() }))).into_response()
}

async fn healthz(State(model): State<Shared>) -> Response {
    match model {
        Some(scorer) => Json(Health {
            status: "ok".into(),
            model: Some(info(&scorer)),
        })
        .into_response(),
        None => (
            StatusCode::SERVICE_UNAVAILABLE,
            Json(Health {
                status: "no model loaded".into(),
                model: None,
            }),
        )
            .into_response(),
    }
}

async fn score_text(State(model): State<Shared>, body: Bytes) -> Response {
    let Some(scorer) = model else {
        return error(StatusCode::SERVICE_UNAVAILABLE, "no model loaded");
    };
    let request: ScoreRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return error(StatusCode::BAD_REQUEST, format!("invalid request body: {e}")),
    };
    let sentences = match request.input_text {
        InputText::One(s) => vec![s],
        InputText::Many(v) => v,
    };
    if sentences.is_empty() || sentences.iter().any(|s| s.trim().is_empty()) {
        return error(StatusCode::BAD_REQUEST, "input_text must be non-empty");
    }
    let worker = Arc::clone(&scorer);
    let scored = tokio::task::spawn_blocking(move || {
        let predictions = worker.score(&sentences)?;
        Ok::<_, claimspot::Error>(
            sentences
                .into_iter()
                .zip(predictions)
                .map(|(text, p)| ScoredSentence {
                    text,
                    score: p.cws,
                    label: p.label,
                })
                .collect::<Vec<_>>(),
        )
    })
    .await;
    match scored {
        Ok(Ok(results)) => Json(ScoreResponse {
            results,
            model: info(&scorer),
        })
        .into_response(),
        Ok(Err(e)) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

/// Routes over `model`; without a model every endpoint answers 503.
pub fn router(model: Option<Arc<Scorer>>) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/score/text", post(score_text))
        .layer(DefaultBodyLimit::max(MAX_BODY_BYTES))
        .with_state(model)
}

/// `flag`, else the `PORT` variable, else [`DEFAULT_PORT`].
pub fn resolve_port(flag: Option<u16>) -> Result<u16, String> {
    if let Some(p) = flag {
        return Ok(p);
    }
    match std::env::var("PORT") {
        Ok(v) => v.parse().map_err(|_| format!("PORT={v:?} is not a port number")),
        Err(_) => Ok(DEFAULT_PORT),
    }
}

/// Serves until the process is stopped.
pub async fn serve(model: Option<Arc<Scorer>>, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(model)).await
}
