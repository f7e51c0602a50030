//! Model Context Protocol client: `initialize`, `tools/list` and
//! `tools/call` over single-request JSON-RPC 2.0, plus the glue that turns
//! model output into tool calls and tool results into chunks.

pub mod schema;
mod stub;

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::chunker::{compose_body, make_chunk_id, truncate_to_millis, Chunk};
use crate::ingest::Fence;
use crate::tokenize::{count_tokens, truncate_to_tokens};

pub use stub::{LoopbackTransport, StubToolServer};

pub const PROTOCOL_VERSION: &str = "2025-06-18";
pub const DEFAULT_TOOL_TIMEOUT_MS: u64 = 10_000;
/// Info string of the fenced block a model uses to request a tool.
pub const TOOL_CALL_FENCE: &str = "tool_call";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum McpError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("no response within {0} ms")]
    Timeout(u64),
    #[error("JSON-RPC error {code}: {message}")]
    Rpc { code: i64, message: String },
    #[error("malformed response: {0}")]
    Protocol(String),
}

fn default_timeout_ms() -> u64 {
    DEFAULT_TOOL_TIMEOUT_MS
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McpEndpoint {
    pub name: String,
    pub base_url: String,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    /// Sent as `Authorization: Bearer <token>` when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bearer_token: Option<String>,
}

impl McpEndpoint {
    pub fn new(name: impl Into<String>, base_url: impl Into<String>) -> Self {
        McpEndpoint {
            name: name.into(),
            base_url: base_url.into(),
            timeout_ms: DEFAULT_TOOL_TIMEOUT_MS,
            bearer_token: None,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.name.is_empty() {
            return Err("endpoint name is empty".into());
        }
        let rest = self
            .base_url
            .strip_prefix("http://")
            .or_else(|| self.base_url.strip_prefix("https://"))
            .ok_or_else(|| format!("base_url `{}` is not an absolute http(s) URL", self.base_url))?;
        if rest.is_empty() || rest.starts_with('/') {
            return Err(format!("base_url `{}` has no host", self.base_url));
        }
        if self.timeout_ms == 0 {
            return Err("timeout_ms must be positive".into());
        }
        Ok(())
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_millis(self.timeout_ms)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolDescriptor {
    pub endpoint_name: String,
    pub tool_name: String,
    pub description: String,
    pub input_schema: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCall {
    pub call_id: String,
    pub endpoint_name: String,
    pub tool_name: String,
    pub arguments: Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolResult {
    pub call_id: String,
    pub ok: bool,
    pub content_text: String,
    pub raised_at: DateTime<Utc>,
}

impl ToolResult {
    pub fn failed(call_id: &str, message: impl Into<String>) -> Self {
        ToolResult {
            call_id: call_id.to_string(),
            ok: false,
            content_text: message.into(),
            raised_at: truncate_to_millis(Utc::now()),
        }
    }
}

/// Sends one JSON-RPC request and returns the raw response object.
pub trait JsonRpcTransport: Send + Sync {
    fn send(&self, request: &Value, timeout: Duration) -> Result<Value, McpError>;
}

/// A registered MCP endpoint as the pipeline sees it.
pub trait ToolEndpoint: Send + Sync {
    fn name(&self) -> &str;
    fn list_tools(&self) -> Result<Vec<ToolDescriptor>, McpError>;
    /// Always yields a result; failures come back with `ok = false`.
    fn call_tool(&self, call: &ToolCall) -> ToolResult;
}

/// One JSON-RPC session with an endpoint. Requests are serialized.
pub struct McpClient<T> {
    endpoint: McpEndpoint,
    transport: T,
    session: Mutex<bool>,
    next_id: AtomicU64,
}

impl<T: JsonRpcTransport> McpClient<T> {
    pub fn new(endpoint: McpEndpoint, transport: T) -> Self {
        McpClient {
            endpoint,
            transport,
            session: Mutex::new(false),
            next_id: AtomicU64::new(1),
        }
    }

    pub fn endpoint(&self) -> &McpEndpoint {
        &self.endpoint
    }

    fn request(&self, method: &str, params: Value) -> Result<Value, McpError> {
        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        let request = json!({"jsonrpc": "2.0", "id": id, "method": method, "params": params});
        let response = self.transport.send(&request, self.endpoint.timeout())?;
        if let Some(err) = response.get("error") {
            return Err(McpError::Rpc {
                code: err.get("code").and_then(Value::as_i64).unwrap_or(0),
                message: err
                    .get("message")
                    .and_then(Value::as_str)
                    .unwrap_or("unspecified error")
                    .to_string(),
            });
        }
        match response.get("result") {
            Some(result) => Ok(result.clone()),
            None => Err(McpError::Protocol(format!("`{method}` response has no result"))),
        }
    }

    /// Runs `f` inside the session, performing the handshake first if this
    /// is the session's first request.
    fn in_session<R>(&self, f: impl FnOnce() -> Result<R, McpError>) -> Result<R, McpError> {
        let mut ready = self.session.lock().unwrap_or_else(|e| e.into_inner());
        if !*ready {
            self.request(
                "initialize",
                json!({
                    "protocolVersion": PROTOCOL_VERSION,
                    "capabilities": {},
                    "clientInfo": {"name": "ragx", "version": env!("CARGO_PKG_VERSION")},
                }),
            )?;
            *ready = true;
        }
        f()
    }

    pub fn list_tools(&self) -> Result<Vec<ToolDescriptor>, McpError> {
        self.in_session(|| {
            let mut tools = Vec::new();
            let mut cursor: Option<String> = None;
            loop {
                let params = match &cursor {
                    Some(c) => json!({"cursor": c}),
                    None => json!({}),
                };
                let result = self.request("tools/list", params)?;
                let page = result
                    .get("tools")
                    .and_then(Value::as_array)
                    .ok_or_else(|| McpError::Protocol("`tools/list` result has no `tools` array".into()))?;
                for tool in page {
                    let name = tool
                        .get("name")
                        .and_then(Value::as_str)
                        .ok_or_else(|| McpError::Protocol("tool without a name".into()))?;
                    tools.push(ToolDescriptor {
                        endpoint_name: self.endpoint.name.clone(),
                        tool_name: name.to_string(),
                        description: tool
                            .get("description")
                            .and_then(Value::as_str)
                            .unwrap_or_default()
                            .to_string(),
                        input_schema: tool
                            .get("inputSchema")
                            .cloned()
                            .unwrap_or_else(|| json!({"type": "object"})),
                    });
                }
                match result.get("nextCursor").and_then(Value::as_str) {
                    Some(next) if !next.is_empty() => cursor = Some(next.to_string()),
                    _ => break,
                }
            }
            Ok(tools)
        })
    }

    pub fn call_tool(&self, call: &ToolCall) -> ToolResult {
        let outcome = self.in_session(|| {
            self.request(
                "tools/call",
                json!({"name": call.tool_name, "arguments": call.arguments}),
            )
        });
        match outcome {
            Ok(result) => {
                let Some(items) = result.get("content").and_then(Value::as_array) else {
                    return ToolResult::failed(&call.call_id, "malformed response: `tools/call` result has no `content` array");
                };
                let text = items
                    .iter()
                    .filter(|i| i.get("type").and_then(Value::as_str) == Some("text"))
                    .filter_map(|i| i.get("text").and_then(Value::as_str))
                    .collect::<Vec<_>>()
                    .join("\n");
                let is_error = result.get("isError").and_then(Value::as_bool).unwrap_or(false);
                ToolResult {
                    call_id: call.call_id.clone(),
                    ok: !is_error,
                    content_text: text,
                    raised_at: truncate_to_millis(Utc::now()),
                }
            }
            Err(e) => ToolResult::failed(&call.call_id, format!("{} failed: {e}", call.tool_name)),
        }
    }
}

impl<T: JsonRpcTransport> ToolEndpoint for McpClient<T> {
    fn name(&self) -> &str {
        &self.endpoint.name
    }

    fn list_tools(&self) -> Result<Vec<ToolDescriptor>, McpError> {
        McpClient::list_tools(self)
    }

    fn call_tool(&self, call: &ToolCall) -> ToolResult {
        McpClient::call_tool(self, call)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParsedToolCalls {
    pub calls: Vec<ToolCall>,
    /// One entry per skipped block.
    pub diagnostics: Vec<String>,
}

fn fenced_blocks(text: &str, tag: &str) -> Vec<String> {
    let mut blocks = Vec::new();
    let mut lines = text.lines();
    while let Some(line) = lines.next() {
        let Some(fence) = Fence::open(line) else {
            continue;
        };
        let trimmed = line.trim_start();
        let marker = trimmed.chars().next().unwrap_or('`');
        let info = trimmed.trim_start_matches(marker).trim();
        let mut body = Vec::new();
        for inner in lines.by_ref() {
            if fence.closes(inner) {
                break;
            }
            body.push(inner);
        }
        if info == tag {
            blocks.push(body.join("\n"));
        }
    }
    blocks
}

fn resolve<'a>(name: &str, known: &'a [ToolDescriptor]) -> Option<&'a ToolDescriptor> {
    known
        .iter()
        .find(|d| format!("{}/{}", d.endpoint_name, d.tool_name) == name)
        .or_else(|| known.iter().find(|d| d.tool_name == name))
}

/// Extracts ```` ```tool_call ```` blocks holding `{"tool", "arguments"}`.
/// Blocks that do not parse, name an unknown tool or carry arguments that
/// violate the tool's schema are skipped with a diagnostic. Call ids are
/// `call_1`, `call_2`, ... in order of appearance.
pub fn parse_tool_calls(generator_output: &str, known: &[ToolDescriptor]) -> ParsedToolCalls {
    let mut parsed = ParsedToolCalls::default();
    for (i, block) in fenced_blocks(generator_output, TOOL_CALL_FENCE).into_iter().enumerate() {
        let n = i + 1;
        let value: Value = match serde_json::from_str(&block) {
            Ok(v) => v,
            Err(e) => {
                parsed.diagnostics.push(format!("tool_call block {n}: invalid JSON: {e}"));
                continue;
            }
        };
        let Some(name) = value.get("tool").and_then(Value::as_str) else {
            parsed.diagnostics.push(format!("tool_call block {n}: missing string field `tool`"));
            continue;
        };
        let arguments = match value.get("arguments") {
            None | Some(Value::Null) => Map::new(),
            Some(Value::Object(m)) => m.clone(),
            Some(other) => {
                parsed
                    .diagnostics
                    .push(format!("tool_call block {n}: `arguments` must be an object, got {other}"));
                continue;
            }
        };
        let Some(desc) = resolve(name, known) else {
            parsed.diagnostics.push(format!("tool_call block {n}: unknown tool `{name}`"));
            continue;
        };
        if let Err(e) = schema::validate(&desc.input_schema, &Value::Object(arguments.clone())) {
            parsed
                .diagnostics
                .push(format!("tool_call block {n}: invalid arguments for `{name}`: {e}"));
            continue;
        }
        parsed.calls.push(ToolCall {
            call_id: format!("call_{}", parsed.calls.len() + 1),
            endpoint_name: desc.endpoint_name.clone(),
            tool_name: desc.tool_name.clone(),
            arguments,
        });
    }
    parsed
}

/// Wraps a tool result as a chunk so downstream stages treat it like any
/// retrieved chunk. The body is cut to `max_tokens`.
pub fn tool_result_to_chunk(result: &ToolResult, call: &ToolCall, max_tokens: usize) -> Chunk {
    let source_id = format!("mcp:{}", call.endpoint_name);
    let heading_path = vec![call.tool_name.clone()];
    let prefix = format!("# {}", call.tool_name);
    let room = max_tokens.saturating_sub(count_tokens(&prefix));
    let body = compose_body(&prefix, truncate_to_tokens(&result.content_text, room));
    Chunk {
        id: make_chunk_id(&source_id, &heading_path, &body),
        uri: format!("mcp://{}/{}", call.endpoint_name, call.tool_name),
        token_count: count_tokens(&body) as u32,
        source_id,
        heading_path,
        body,
        created_at: truncate_to_millis(result.raised_at),
    }
}
