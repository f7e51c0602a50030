//! MCP over HTTP: a JSON-RPC transport for [`McpClient`] and a router
//! exposing the bundled stub tool server.

use std::sync::Arc;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::{Json, Router};
use reqwest::blocking::Client;
use serde_json::{json, Value};

use ragx_core::mcp::{JsonRpcTransport, McpClient, McpEndpoint, McpError, StubToolServer};

/// Posts each JSON-RPC message to the endpoint's base URL.
pub struct HttpTransport {
    url: String,
    bearer_token: Option<String>,
    client: Client,
}

impl HttpTransport {
    pub fn new(endpoint: &McpEndpoint) -> Result<Self, McpError> {
        let client = Client::builder()
            .build()
            .map_err(|e| McpError::Transport(e.to_string()))?;
        Ok(HttpTransport {
            url: endpoint.base_url.clone(),
            bearer_token: endpoint.bearer_token.clone(),
            client,
        })
    }
}

impl JsonRpcTransport for HttpTransport {
    fn send(&self, request: &Value, timeout: Duration) -> Result<Value, McpError> {
        let mut req = self
            .client
            .post(&self.url)
            .timeout(timeout)
            .header(header::ACCEPT, "application/json")
            .json(request);
        if let Some(token) = &self.bearer_token {
            req = req.bearer_auth(token);
        }
        let map = |e: reqwest::Error| {
            if e.is_timeout() {
                McpError::Timeout(timeout.as_millis() as u64)
            } else {
                McpError::Transport(e.to_string())
            }
        };
        let response = req.send().map_err(map)?;
        let status = response.status();
        let body = response.bytes().map_err(map)?;
        if !status.is_success() {
            return Err(McpError::Transport(format!(
                "HTTP {status}: {}",
                String::from_utf8_lossy(&body)
            )));
        }
        serde_json::from_slice(&body).map_err(|e| McpError::Protocol(format!("response is not JSON: {e}")))
    }
}

pub fn connect(endpoint: McpEndpoint) -> Result<McpClient<HttpTransport>, McpError> {
    let transport = HttpTransport::new(&endpoint)?;
    Ok(McpClient::new(endpoint, transport))
}

/// Routes `POST /` and `POST /mcp` to the stub server.
pub fn stub_mcp_router(server: Arc<StubToolServer>) -> Router {
    Router::new()
        .route("/", post(handle))
        .route("/mcp", post(handle))
        .with_state(server)
}

async fn handle(State(server): State<Arc<StubToolServer>>, body: Bytes) -> Response {
    let request: Value = match serde_json::from_slice(&body) {
        Ok(v) => v,
        Err(e) => {
            let err = json!({"jsonrpc": "2.0", "id": null, "error": {"code": -32700, "message": format!("parse error: {e}")}});
            return (StatusCode::OK, Json(err)).into_response();
        }
    };
    match tokio::task::spawn_blocking(move || server.handle(&request)).await {
        Ok(Some(response)) => Json(response).into_response(),
        Ok(None) => StatusCode::ACCEPTED.into_response(),
        Err(e) => (StatusCode::INTERNAL_SERVER_ERROR, e.to_string()).into_response(),
    }
}
