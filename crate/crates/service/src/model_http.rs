//! Clients for OpenAI-compatible model servers.
//!
//! * embeddings: `POST {url}/v1/embeddings`
//! * reranking: `POST {url}/v1/rerank` (`{"results": [{"index", "relevance_score"}]}`)
//! * generation: `POST {url}/v1/chat/completions` with `"stream": true`
//!
//! Reranker scores pass through the logistic function so raw logits and
//! probabilities both land in `[0, 1]` with their order kept.

use std::io::BufReader;
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use reqwest::blocking::{Client, RequestBuilder, Response};
use serde::Deserialize;
use serde_json::{json, Value};

use ragx_core::backends::{
    BackendError, Completion, Embedder, EmbedderSpec, FinishReason, GenerationParams, Generator, GeneratorSpec,
    PairScorer, ScorerSpec,
};
use ragx_core::index::DenseVector;
use ragx_core::tokenize::{count_tokens, truncate_to_tokens};

use crate::sse::SseReader;

/// Blocks callers beyond `max` concurrent requests.
pub struct InFlightLimit {
    max: Option<usize>,
    current: Mutex<usize>,
    freed: Condvar,
}

pub struct InFlightGuard<'a>(&'a InFlightLimit);

impl InFlightLimit {
    pub fn new(max: Option<usize>) -> Self {
        InFlightLimit {
            max: max.filter(|&m| m > 0),
            current: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    pub fn acquire(&self) -> InFlightGuard<'_> {
        let mut n = self.current.lock().unwrap_or_else(|p| p.into_inner());
        if let Some(max) = self.max {
            while *n >= max {
                n = self.freed.wait(n).unwrap_or_else(|p| p.into_inner());
            }
        }
        *n += 1;
        InFlightGuard(self)
    }

    pub fn in_flight(&self) -> usize {
        *self.current.lock().unwrap_or_else(|p| p.into_inner())
    }
}

impl Drop for InFlightGuard<'_> {
    fn drop(&mut self) {
        let mut n = self.0.current.lock().unwrap_or_else(|p| p.into_inner());
        *n -= 1;
        self.0.freed.notify_one();
    }
}

/// Connection settings shared by the three clients.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpModel {
    pub base_url: String,
    pub model: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
}

struct Conn {
    model: HttpModel,
    client: Client,
    limit: InFlightLimit,
}

impl Conn {
    fn new(model: HttpModel, max_in_flight: Option<usize>) -> Result<Self, BackendError> {
        let client = Client::builder()
            .timeout(model.timeout)
            .build()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        Ok(Conn {
            model,
            client,
            limit: InFlightLimit::new(max_in_flight),
        })
    }

    fn post(&self, path: &str, body: &Value) -> RequestBuilder {
        let url = format!("{}{path}", self.model.base_url.trim_end_matches('/'));
        let req = self.client.post(url).json(body);
        match &self.model.api_key {
            Some(key) => req.bearer_auth(key),
            None => req,
        }
    }

    fn map_err(&self, e: reqwest::Error) -> BackendError {
        if e.is_timeout() {
            BackendError::Timeout(self.model.timeout.as_millis() as u64)
        } else {
            BackendError::Transport(e.to_string())
        }
    }

    fn send(&self, path: &str, body: &Value) -> Result<Response, BackendError> {
        let response = self.post(path, body).send().map_err(|e| self.map_err(e))?;
        let status = response.status();
        if !status.is_success() {
            return Err(BackendError::Status {
                status: status.as_u16(),
                body: response.text().unwrap_or_default(),
            });
        }
        Ok(response)
    }

    fn send_json<T: for<'de> Deserialize<'de>>(&self, path: &str, body: &Value) -> Result<T, BackendError> {
        let _slot = self.limit.acquire();
        let text = self.send(path, body)?.text().map_err(|e| self.map_err(e))?;
        serde_json::from_str(&text).map_err(|e| BackendError::Protocol(format!("{path}: {e}")))
    }
}

pub struct HttpEmbedder {
    spec: EmbedderSpec,
    conn: Conn,
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingItem>,
}

#[derive(Deserialize)]
struct EmbeddingItem {
    embedding: Vec<f32>,
}

impl HttpEmbedder {
    pub fn new(model: HttpModel, dimension: usize, max_input_tokens: usize, max_in_flight: Option<usize>) -> Result<Self, BackendError> {
        let spec = EmbedderSpec {
            tag: model.model.clone(),
            dimension,
            max_input_tokens,
            max_in_flight,
        };
        Ok(HttpEmbedder {
            spec,
            conn: Conn::new(model, max_in_flight)?,
        })
    }
}

impl Embedder for HttpEmbedder {
    fn spec(&self) -> &EmbedderSpec {
        &self.spec
    }

    fn embed(&self, text: &str) -> Result<DenseVector, BackendError> {
        if text.trim().is_empty() {
            return Ok(DenseVector::zeros(self.spec.dimension));
        }
        let input = truncate_to_tokens(text, self.spec.max_input_tokens);
        if input.len() < text.len() {
            tracing::warn!(limit = self.spec.max_input_tokens, "embedding input truncated");
        }
        let body = json!({"model": self.conn.model.model, "input": input});
        let response: EmbeddingResponse = self.conn.send_json("/v1/embeddings", &body)?;
        let item = response
            .data
            .into_iter()
            .next()
            .ok_or_else(|| BackendError::Protocol("embedding response has no data".into()))?;
        if item.embedding.len() != self.spec.dimension {
            return Err(BackendError::Protocol(format!(
                "embedding has dimension {}, expected {}",
                item.embedding.len(),
                self.spec.dimension
            )));
        }
        Ok(DenseVector(item.embedding).normalized())
    }
}

pub struct HttpScorer {
    spec: ScorerSpec,
    conn: Conn,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RerankResponse {
    Wrapped { results: Vec<RerankItem> },
    Bare(Vec<RerankItem>),
}

#[derive(Deserialize)]
struct RerankItem {
    index: usize,
    #[serde(alias = "score")]
    relevance_score: f64,
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl HttpScorer {
    pub fn new(model: HttpModel, context_tokens: usize, max_in_flight: Option<usize>) -> Result<Self, BackendError> {
        Ok(HttpScorer {
            spec: ScorerSpec {
                tag: model.model.clone(),
                context_tokens,
                max_in_flight,
            },
            conn: Conn::new(model, max_in_flight)?,
        })
    }
}

impl PairScorer for HttpScorer {
    fn spec(&self) -> &ScorerSpec {
        &self.spec
    }

    fn score_pair(&self, query: &str, passage: &str) -> Result<f64, BackendError> {
        Ok(self.score_batch(query, &[passage])?[0])
    }

    fn score_batch(&self, query: &str, passages: &[&str]) -> Result<Vec<f64>, BackendError> {
        if passages.is_empty() {
            return Ok(Vec::new());
        }
        let body = json!({"model": self.conn.model.model, "query": query, "documents": passages});
        let items = match self.conn.send_json::<RerankResponse>("/v1/rerank", &body)? {
            RerankResponse::Wrapped { results } => results,
            RerankResponse::Bare(items) => items,
        };
        let mut scores = vec![None; passages.len()];
        for item in items {
            let slot = scores
                .get_mut(item.index)
                .ok_or_else(|| BackendError::Protocol(format!("rerank index {} out of range", item.index)))?;
            if !item.relevance_score.is_finite() {
                return Err(BackendError::Protocol("rerank score is not finite".into()));
            }
            *slot = Some(logistic(item.relevance_score));
        }
        scores
            .into_iter()
            .enumerate()
            .map(|(i, s)| s.ok_or_else(|| BackendError::Protocol(format!("no rerank score for document {i}"))))
            .collect()
    }
}

pub struct HttpGenerator {
    spec: GeneratorSpec,
    conn: Conn,
}

impl HttpGenerator {
    pub fn new(model: HttpModel, context_tokens: usize, max_in_flight: Option<usize>) -> Result<Self, BackendError> {
        Ok(HttpGenerator {
            spec: GeneratorSpec {
                tag: model.model.clone(),
                context_tokens,
                supports_streaming: true,
                max_in_flight,
            },
            conn: Conn::new(model, max_in_flight)?,
        })
    }
}

impl Generator for HttpGenerator {
    fn spec(&self) -> &GeneratorSpec {
        &self.spec
    }

    fn generate_stream(
        &self,
        prompt: &str,
        params: &GenerationParams,
        on_token: &mut dyn FnMut(&str),
    ) -> Result<Completion, BackendError> {
        let prompt_tokens = count_tokens(prompt);
        if prompt_tokens > self.spec.context_tokens {
            return Err(BackendError::InvalidInput(format!(
                "prompt has {prompt_tokens} tokens, context is {}",
                self.spec.context_tokens
            )));
        }
        let body = json!({
            "model": self.conn.model.model,
            "messages": [{"role": "user", "content": prompt}],
            "max_tokens": params.max_tokens,
            "temperature": params.temperature,
            "stream": true,
            "stream_options": {"include_usage": true},
        });
        let _slot = self.conn.limit.acquire();
        let response = self.conn.send("/v1/chat/completions", &body)?;
        let mut text = String::new();
        let mut finish = None;
        let mut usage: Option<(usize, usize)> = None;
        let mut done = false;
        for frame in SseReader::new(BufReader::new(response)) {
            let frame = frame.map_err(|e| BackendError::Transport(format!("stream interrupted: {e}")))?;
            if frame.data == "[DONE]" {
                done = true;
                break;
            }
            let chunk: Value = serde_json::from_str(&frame.data)
                .map_err(|e| BackendError::Protocol(format!("bad stream chunk: {e}")))?;
            if let Some(u) = chunk.get("usage").filter(|u| !u.is_null()) {
                let get = |k: &str| u.get(k).and_then(Value::as_u64).unwrap_or(0) as usize;
                usage = Some((get("prompt_tokens"), get("completion_tokens")));
            }
            let Some(choice) = chunk.get("choices").and_then(|c| c.get(0)) else {
                continue;
            };
            if let Some(piece) = choice.pointer("/delta/content").and_then(Value::as_str) {
                if !piece.is_empty() {
                    text.push_str(piece);
                    on_token(piece);
                }
            }
            match choice.get("finish_reason").and_then(Value::as_str) {
                Some("length") => finish = Some(FinishReason::Length),
                Some(_) => finish = Some(FinishReason::Stop),
                None => {}
            }
        }
        if !done && finish.is_none() {
            return Err(BackendError::Transport("stream ended before completion".into()));
        }
        let (prompt_tokens, completion_tokens) = usage.unwrap_or((prompt_tokens, count_tokens(&text)));
        Ok(Completion {
            text,
            finish_reason: finish.unwrap_or(FinishReason::Stop),
            prompt_tokens,
            completion_tokens,
        })
    }
}
