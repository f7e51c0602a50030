//! Events streamed to chat clients.
//!
//! On the wire every event is one JSON object carrying `seq`, `kind` and
//! the kind's fields, e.g. `{"seq":4,"kind":"token","text":" Paris"}`.

use serde::{Deserialize, Serialize};

use crate::backends::FinishReason;
use crate::mcp::{ToolCall, ToolResult};
use crate::retrieval::ScoredChunk;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StageTimings {
    pub retrieve_ms: f64,
    pub rerank_ms: f64,
    pub tool_ms: f64,
    /// From the start of answer generation to its first token.
    pub generate_first_token_ms: f64,
    pub total_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventBody {
    Token {
        text: String,
    },
    ToolCall(ToolCall),
    ToolResult(ToolResult),
    Chunks {
        chunks: Vec<ScoredChunk>,
    },
    Timing(StageTimings),
    /// `fatal = false` marks a warning after which the request carries on.
    Error {
        stage: String,
        message: String,
        fatal: bool,
    },
    Done {
        finish_reason: Option<FinishReason>,
    },
}

impl EventBody {
    pub fn kind(&self) -> &'static str {
        match self {
            EventBody::Token { .. } => "token",
            EventBody::ToolCall(_) => "tool_call",
            EventBody::ToolResult(_) => "tool_result",
            EventBody::Chunks { .. } => "chunks",
            EventBody::Timing(_) => "timing",
            EventBody::Error { .. } => "error",
            EventBody::Done { .. } => "done",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamEvent {
    pub seq: u64,
    #[serde(flatten)]
    pub body: EventBody,
}

impl StreamEvent {
    pub fn kind(&self) -> &'static str {
        self.body.kind()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("stream events always serialize")
    }
}

/// Checks the ordering contract of one request's events: `seq` strictly
/// increasing, exactly one `chunks` and one `done`, every `token` before
/// `chunks`, `chunks` before `done`, and `done` last.
pub fn check_event_order(events: &[StreamEvent]) -> Result<(), String> {
    if let Some(w) = events.windows(2).find(|w| w[1].seq <= w[0].seq) {
        return Err(format!("seq {} follows {}", w[1].seq, w[0].seq));
    }
    let positions = |kind: &str| -> Vec<usize> {
        events
            .iter()
            .enumerate()
            .filter(|(_, e)| e.kind() == kind)
            .map(|(i, _)| i)
            .collect()
    };
    let done = positions("done");
    if done.len() != 1 {
        return Err(format!("{} done events", done.len()));
    }
    if done[0] != events.len() - 1 {
        return Err("done is not the last event".into());
    }
    let chunks = positions("chunks");
    if chunks.len() != 1 {
        return Err(format!("{} chunks events", chunks.len()));
    }
    if let Some(&last_token) = positions("token").last() {
        if last_token > chunks[0] {
            return Err("a token event follows the chunks event".into());
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn wire_shape() {
        let e = StreamEvent {
            seq: 3,
            body: EventBody::Token { text: "Pa".into() },
        };
        assert_eq!(serde_json::to_value(&e).unwrap(), json!({"seq": 3, "kind": "token", "text": "Pa"}));
        let back: StreamEvent = serde_json::from_str(&e.to_json()).unwrap();
        assert_eq!(back, e);
    }

    #[test]
    fn timing_and_done_shapes() {
        let t = StreamEvent {
            seq: 1,
            body: EventBody::Timing(StageTimings {
                total_ms: 2.5,
                ..Default::default()
            }),
        };
        let v = serde_json::to_value(&t).unwrap();
        assert_eq!(v["kind"], "timing");
        assert_eq!(v["total_ms"], 2.5);
        let d = StreamEvent {
            seq: 2,
            body: EventBody::Done {
                finish_reason: Some(FinishReason::Stop),
            },
        };
        assert_eq!(serde_json::to_value(&d).unwrap()["finish_reason"], "stop");
    }

    fn ev(seq: u64, body: EventBody) -> StreamEvent {
        StreamEvent { seq, body }
    }

    #[test]
    fn order_checker() {
        let tok = || EventBody::Token { text: "x".into() };
        let chunks = || EventBody::Chunks { chunks: vec![] };
        let done = || EventBody::Done { finish_reason: None };
        assert!(check_event_order(&[ev(1, tok()), ev(2, chunks()), ev(3, done())]).is_ok());
        assert!(check_event_order(&[ev(1, chunks()), ev(2, tok()), ev(3, done())]).is_err());
        assert!(check_event_order(&[ev(1, tok()), ev(2, chunks())]).is_err());
        assert!(check_event_order(&[ev(2, chunks()), ev(2, done())]).is_err());
        assert!(check_event_order(&[ev(1, chunks()), ev(2, done()), ev(3, done())]).is_err());
    }
}
