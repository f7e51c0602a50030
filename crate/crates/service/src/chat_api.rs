//! The chat backend: `POST /v1/chat` streams [`StreamEvent`]s as
//! server-sent events, one frame per event named by its kind; `GET /health`
//! reports what is registered; `/ui` serves the static client when a
//! directory is configured.
//!
//! Bodies that are not a valid chat request get a 400. Everything else,
//! including histories the pipeline rejects, is answered with a stream that
//! ends in `done`.

use std::convert::Infallible;
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tower_http::services::ServeDir;

use ragx_core::pipeline::{ChatPipeline, ChatRequest, StreamEvent};

use crate::source_api::error_response;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendHealth {
    pub status: String,
    pub sources: usize,
    pub tool_endpoints: usize,
    pub generator: String,
}

pub fn chat_router(pipeline: Arc<ChatPipeline>, ui_dir: Option<PathBuf>) -> Router {
    let router = Router::new()
        .route("/v1/chat", post(chat))
        .route("/health", get(health))
        .with_state(pipeline);
    match ui_dir {
        Some(dir) => router.nest_service("/ui", ServeDir::new(dir).append_index_html_on_directories(true)),
        None => router,
    }
}

async fn health(State(pipeline): State<Arc<ChatPipeline>>) -> Json<BackendHealth> {
    Json(BackendHealth {
        status: "ok".into(),
        sources: pipeline.source_count(),
        tool_endpoints: pipeline.tool_endpoint_count(),
        generator: pipeline.generator().spec().tag.clone(),
    })
}

fn to_frame(event: &StreamEvent) -> Event {
    Event::default()
        .event(event.kind())
        .id(event.seq.to_string())
        .data(event.to_json())
}

async fn chat(State(pipeline): State<Arc<ChatPipeline>>, body: Result<Json<ChatRequest>, JsonRejection>) -> Response {
    let Json(request) = match body {
        Ok(b) => b,
        Err(e) => return error_response(StatusCode::BAD_REQUEST, e.body_text()),
    };
    let (tx, rx) = tokio::sync::mpsc::channel::<StreamEvent>(64);
    tokio::task::spawn_blocking(move || {
        pipeline.handle_chat(&request, &mut |event| {
            let _ = tx.blocking_send(event);
        });
    });
    let stream = futures::stream::unfold(rx, |mut rx| async move {
        let event = rx.recv().await?;
        Some((Ok::<_, Infallible>(to_frame(&event)), rx))
    });
    Sse::new(stream).keep_alive(KeepAlive::default()).into_response()
}
