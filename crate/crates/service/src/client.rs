//! Blocking client for the chat backend's `/v1/chat` stream.

use std::io::BufReader;
use std::time::Duration;

use reqwest::blocking::Client;
use thiserror::Error;

use ragx_core::pipeline::{ChatRequest, StreamEvent};

use crate::sse::SseReader;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("cannot reach {url}: {message}")]
    Connection { url: String, message: String },
    #[error("backend answered HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed event: {0}")]
    Protocol(String),
}

pub struct ChatClient {
    base_url: String,
    client: Client,
}

impl ChatClient {
    pub fn new(base_url: &str, timeout: Duration) -> Result<Self, ClientError> {
        let client = Client::builder().timeout(timeout).build().map_err(|e| ClientError::Connection {
            url: base_url.to_string(),
            message: e.to_string(),
        })?;
        Ok(ChatClient {
            base_url: base_url.trim_end_matches('/').to_string(),
            client,
        })
    }

    /// Sends one chat request and passes every event to `on_event` as it
    /// arrives. Returns when the stream closes.
    pub fn chat(&self, request: &ChatRequest, on_event: &mut dyn FnMut(StreamEvent)) -> Result<(), ClientError> {
        let url = format!("{}/v1/chat", self.base_url);
        let connection = |e: &dyn std::fmt::Display| ClientError::Connection {
            url: url.clone(),
            message: e.to_string(),
        };
        let response = self.client.post(&url).json(request).send().map_err(|e| connection(&e))?;
        let status = response.status();
        if !status.is_success() {
            return Err(ClientError::Status {
                status: status.as_u16(),
                body: response.text().unwrap_or_default(),
            });
        }
        for frame in SseReader::new(BufReader::new(response)) {
            let frame = frame.map_err(|e| connection(&e))?;
            let event: StreamEvent =
                serde_json::from_str(&frame.data).map_err(|e| ClientError::Protocol(format!("{e}: {}", frame.data)))?;
            if !frame.event.is_empty() && frame.event != event.kind() {
                return Err(ClientError::Protocol(format!(
                    "frame named `{}` carries a `{}` event",
                    frame.event,
                    event.kind()
                )));
            }
            on_event(event);
        }
        Ok(())
    }

    /// Collects all events of one request.
    pub fn chat_collect(&self, request: &ChatRequest) -> Result<Vec<StreamEvent>, ClientError> {
        let mut events = Vec::new();
        self.chat(request, &mut |e| events.push(e))?;
        Ok(events)
    }
}
