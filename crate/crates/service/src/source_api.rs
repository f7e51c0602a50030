//! The RAG source service: hybrid search over one shard.
//!
//! `POST /v1/search` takes `{"query": "...", "top_k": 5}` and answers
//! `{"chunks": [...]}`; `GET /health` reports the shard id and size.

use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use ragx_core::pipeline::{LocalSource, SearchSource};
use ragx_core::retrieval::ScoredChunk;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchRequest {
    pub query: String,
    pub top_k: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResponse {
    pub chunks: Vec<ScoredChunk>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceHealth {
    pub status: String,
    pub shard_id: String,
    pub chunks: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}

pub(crate) fn error_response(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(ErrorBody { error: message.into() })).into_response()
}

pub fn source_router(source: Arc<LocalSource>) -> Router {
    Router::new()
        .route("/v1/search", post(search))
        .route("/health", get(health))
        .with_state(source)
}

async fn health(State(source): State<Arc<LocalSource>>) -> Json<SourceHealth> {
    Json(SourceHealth {
        status: "ok".into(),
        shard_id: source.shard().shard_id.clone(),
        chunks: source.shard().len(),
    })
}

async fn search(State(source): State<Arc<LocalSource>>, body: Result<Json<SearchRequest>, JsonRejection>) -> Response {
    let Json(req) = match body {
        Ok(b) => b,
        Err(e) => return error_response(StatusCode::BAD_REQUEST, e.body_text()),
    };
    if req.top_k == 0 {
        return error_response(StatusCode::BAD_REQUEST, "top_k must be at least 1");
    }
    let result = tokio::task::spawn_blocking(move || source.search(&req.query, req.top_k)).await;
    match result {
        Ok(Ok(chunks)) => Json(SearchResponse { chunks }).into_response(),
        Ok(Err(e)) => error_response(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
        Err(e) => error_response(StatusCode::INTERNAL_SERVER_ERROR, format!("search task failed: {e}")),
    }
}
