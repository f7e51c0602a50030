//! A small ticket-system MCP server used by tests and the demo setup.
//!
//! Tools: `echo` returns its arguments as `key=value` pairs, `create_issue`
//! hands out increasing issue numbers, `sleep` waits `ms` milliseconds and
//! `fail` always reports an error.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{mpsc, Arc};
use std::thread;
use std::time::Duration;

use serde_json::{json, Value};

use super::{JsonRpcTransport, McpError, PROTOCOL_VERSION};

pub struct StubToolServer {
    next_issue: AtomicU64,
    page_size: Option<usize>,
}

impl Default for StubToolServer {
    fn default() -> Self {
        StubToolServer::new()
    }
}

impl StubToolServer {
    pub fn new() -> Self {
        StubToolServer {
            next_issue: AtomicU64::new(1),
            page_size: None,
        }
    }

    /// Splits `tools/list` into pages of `n` tools linked by cursors.
    pub fn with_page_size(n: usize) -> Self {
        StubToolServer {
            page_size: Some(n.max(1)),
            ..StubToolServer::new()
        }
    }

    pub fn tool_definitions() -> Vec<Value> {
        vec![
            json!({
                "name": "echo",
                "description": "Returns its arguments as key=value pairs.",
                "inputSchema": {"type": "object", "additionalProperties": true}
            }),
            json!({
                "name": "create_issue",
                "description": "Opens a ticket in the issue tracker and returns its number.",
                "inputSchema": {
                    "type": "object",
                    "properties": {
                        "title": {"type": "string"},
                        "body": {"type": "string"},
                        "priority": {"type": "string", "enum": ["low", "normal", "high"]}
                    },
                    "required": ["title"],
                    "additionalProperties": false
                }
            }),
            json!({
                "name": "sleep",
                "description": "Waits for the given number of milliseconds.",
                "inputSchema": {
                    "type": "object",
                    "properties": {"ms": {"type": "integer"}},
                    "required": ["ms"]
                }
            }),
            json!({
                "name": "fail",
                "description": "Always fails.",
                "inputSchema": {"type": "object"}
            }),
        ]
    }

    /// Answers one JSON-RPC request. Notifications (no `id`) get `None`.
    pub fn handle(&self, request: &Value) -> Option<Value> {
        let id = request.get("id")?.clone();
        let method = request.get("method").and_then(Value::as_str).unwrap_or("");
        let params = request.get("params").cloned().unwrap_or(Value::Null);
        let outcome = match method {
            "initialize" => Ok(json!({
                "protocolVersion": PROTOCOL_VERSION,
                "capabilities": {"tools": {}},
                "serverInfo": {"name": "ragx-stub-tools", "version": env!("CARGO_PKG_VERSION")}
            })),
            "tools/list" => Ok(self.list(&params)),
            "tools/call" => self.call(&params),
            other => Err((-32601, format!("method not found: {other}"))),
        };
        Some(match outcome {
            Ok(result) => json!({"jsonrpc": "2.0", "id": id, "result": result}),
            Err((code, message)) => {
                json!({"jsonrpc": "2.0", "id": id, "error": {"code": code, "message": message}})
            }
        })
    }

    fn list(&self, params: &Value) -> Value {
        let tools = Self::tool_definitions();
        let Some(size) = self.page_size else {
            return json!({ "tools": tools });
        };
        let start: usize = params
            .get("cursor")
            .and_then(Value::as_str)
            .and_then(|c| c.parse().ok())
            .unwrap_or(0);
        let end = (start + size).min(tools.len());
        let mut page = json!({ "tools": tools[start.min(end)..end] });
        if end < tools.len() {
            page["nextCursor"] = json!(end.to_string());
        }
        page
    }

    fn call(&self, params: &Value) -> Result<Value, (i64, String)> {
        let name = params
            .get("name")
            .and_then(Value::as_str)
            .ok_or((-32602, "missing tool name".to_string()))?;
        let args = params.get("arguments").cloned().unwrap_or_else(|| json!({}));
        let text = |t: String, is_error: bool| {
            Ok(json!({"content": [{"type": "text", "text": t}], "isError": is_error}))
        };
        match name {
            "echo" => {
                let pairs: Vec<String> = args
                    .as_object()
                    .map(|m| {
                        m.iter()
                            .map(|(k, v)| match v {
                                Value::String(s) => format!("{k}={s}"),
                                other => format!("{k}={other}"),
                            })
                            .collect()
                    })
                    .unwrap_or_default();
                text(pairs.join(", "), false)
            }
            "create_issue" => {
                let Some(title) = args.get("title").and_then(Value::as_str) else {
                    return text("create_issue needs a string `title`".into(), true);
                };
                let n = self.next_issue.fetch_add(1, Ordering::Relaxed);
                text(format!("Created issue #{n}: {title}"), false)
            }
            "sleep" => {
                let ms = args.get("ms").and_then(Value::as_u64).unwrap_or(0);
                thread::sleep(Duration::from_millis(ms));
                text(format!("slept {ms} ms"), false)
            }
            "fail" => text("tool failed: the stub was asked to fail".into(), true),
            other => Err((-32602, format!("unknown tool: {other}"))),
        }
    }
}

/// In-process transport to a [`StubToolServer`]. Each request runs on its
/// own thread so that timeouts behave as they would over the network.
#[derive(Clone)]
pub struct LoopbackTransport {
    server: Arc<StubToolServer>,
}

impl LoopbackTransport {
    pub fn new(server: Arc<StubToolServer>) -> Self {
        LoopbackTransport { server }
    }
}

impl JsonRpcTransport for LoopbackTransport {
    fn send(&self, request: &Value, timeout: Duration) -> Result<Value, McpError> {
        let (tx, rx) = mpsc::channel();
        let server = Arc::clone(&self.server);
        let request = request.clone();
        thread::spawn(move || {
            let _ = tx.send(server.handle(&request));
        });
        match rx.recv_timeout(timeout) {
            Ok(Some(response)) => Ok(response),
            Ok(None) => Err(McpError::Protocol("no response to a request".into())),
            Err(mpsc::RecvTimeoutError::Timeout) => Err(McpError::Timeout(timeout.as_millis() as u64)),
            Err(mpsc::RecvTimeoutError::Disconnected) => Err(McpError::Transport("server thread died".into())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mcp::{McpClient, McpEndpoint, ToolCall};
    use serde_json::Map;
    use std::sync::Mutex;

    fn client(server: StubToolServer, timeout_ms: u64) -> McpClient<LoopbackTransport> {
        let mut ep = McpEndpoint::new("stub", "http://stub.invalid");
        ep.timeout_ms = timeout_ms;
        McpClient::new(ep, LoopbackTransport::new(Arc::new(server)))
    }

    fn call(tool: &str, args: Value) -> ToolCall {
        ToolCall {
            call_id: "call_1".into(),
            endpoint_name: "stub".into(),
            tool_name: tool.into(),
            arguments: args.as_object().cloned().unwrap_or_else(Map::new),
        }
    }

    #[test]
    fn lists_declared_tools() {
        let names: Vec<String> = client(StubToolServer::new(), 1000)
            .list_tools()
            .unwrap()
            .into_iter()
            .map(|t| t.tool_name)
            .collect();
        assert_eq!(names, ["echo", "create_issue", "sleep", "fail"]);
    }

    #[test]
    fn paginated_listing_is_complete() {
        let tools = client(StubToolServer::with_page_size(3), 1000).list_tools().unwrap();
        assert_eq!(tools.len(), 4);
        assert!(tools.iter().all(|t| t.endpoint_name == "stub"));
    }

    #[test]
    fn echo_returns_arguments() {
        let r = client(StubToolServer::new(), 1000).call_tool(&call("echo", json!({"x": "1"})));
        assert!(r.ok);
        assert!(r.content_text.contains("x=1"));
        assert_eq!(r.call_id, "call_1");
    }

    #[test]
    fn failing_tool_is_not_ok() {
        let r = client(StubToolServer::new(), 1000).call_tool(&call("fail", json!({})));
        assert!(!r.ok);
        assert!(r.content_text.contains("fail"));
    }

    #[test]
    fn timeout_is_folded_into_result() {
        let r = client(StubToolServer::new(), 50).call_tool(&call("sleep", json!({"ms": 2000})));
        assert!(!r.ok);
        assert!(r.content_text.contains("50 ms"), "{}", r.content_text);
    }

    #[test]
    fn issues_are_numbered() {
        let c = client(StubToolServer::new(), 1000);
        let a = c.call_tool(&call("create_issue", json!({"title": "a"})));
        let b = c.call_tool(&call("create_issue", json!({"title": "b"})));
        assert_eq!(a.content_text, "Created issue #1: a");
        assert_eq!(b.content_text, "Created issue #2: b");
    }

    struct Scripted(Mutex<Vec<Value>>);

    impl JsonRpcTransport for Scripted {
        fn send(&self, _: &Value, _: Duration) -> Result<Value, McpError> {
            Ok(self.0.lock().unwrap().remove(0))
        }
    }

    fn scripted(responses: Vec<Value>) -> McpClient<Scripted> {
        McpClient::new(McpEndpoint::new("s", "http://s"), Scripted(Mutex::new(responses)))
    }

    #[test]
    fn empty_tool_list() {
        let init = json!({"jsonrpc": "2.0", "id": 1, "result": {}});
        let c = scripted(vec![init, json!({"jsonrpc": "2.0", "id": 2, "result": {"tools": []}})]);
        assert!(c.list_tools().unwrap().is_empty());
    }

    #[test]
    fn missing_result_is_protocol_error() {
        let init = json!({"jsonrpc": "2.0", "id": 1, "result": {}});
        let c = scripted(vec![init, json!({"jsonrpc": "2.0", "id": 2})]);
        assert!(matches!(c.list_tools(), Err(McpError::Protocol(_))));
    }

    #[test]
    fn rpc_error_is_reported() {
        let c = scripted(vec![json!({"jsonrpc": "2.0", "id": 1, "error": {"code": -32000, "message": "nope"}})]);
        assert_eq!(
            c.list_tools(),
            Err(McpError::Rpc {
                code: -32000,
                message: "nope".into()
            })
        );
    }

    #[test]
    fn handshake_happens_once() {
        let init = json!({"jsonrpc": "2.0", "id": 1, "result": {}});
        let list = json!({"jsonrpc": "2.0", "id": 2, "result": {"tools": []}});
        let c = scripted(vec![init, list.clone(), list]);
        c.list_tools().unwrap();
        c.list_tools().unwrap();
    }

    #[test]
    fn unknown_method_is_rpc_error() {
        let resp = StubToolServer::new()
            .handle(&json!({"jsonrpc": "2.0", "id": 7, "method": "resources/list"}))
            .unwrap();
        assert_eq!(resp["error"]["code"], -32601);
        assert!(StubToolServer::new().handle(&json!({"jsonrpc": "2.0", "method": "x"})).is_none());
    }
}
