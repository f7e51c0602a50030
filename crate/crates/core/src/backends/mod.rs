//! Contracts for embedding, pairwise relevance scoring and streaming
//! generation, plus deterministic in-process implementations.
//!
//! The HTTP clients for real model servers live in the service crate and
//! implement the same traits.

mod mock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::index::DenseVector;

pub use mock::{
    fnv1a64, HashingEmbedder, LexicalOverlapScorer, TemplateEchoGenerator, HASH_EMBEDDER_DIMENSION,
    HASH_EMBEDDER_TAG, NO_CONTEXT_ANSWER, TOOL_TRIGGER,
};

/// Tag of the default reranker model served over HTTP.
pub const DEFAULT_RERANKER_TAG: &str = "bge-reranker-v2-m3";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("backend returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed backend response: {0}")]
    Protocol(String),
    #[error("backend timed out after {0} ms")]
    Timeout(u64),
    #[error("invalid backend input: {0}")]
    InvalidInput(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbedderSpec {
    pub tag: String,
    pub dimension: usize,
    pub max_input_tokens: usize,
    /// Largest number of concurrent requests the backend accepts.
    #[serde(default)]
    pub max_in_flight: Option<usize>,
}

impl EmbedderSpec {
    pub fn new(tag: impl Into<String>, dimension: usize, max_input_tokens: usize) -> Self {
        EmbedderSpec {
            tag: tag.into(),
            dimension,
            max_input_tokens,
            max_in_flight: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScorerSpec {
    pub tag: String,
    /// Model context in tokens; bounds one rerank batch.
    pub context_tokens: usize,
    #[serde(default)]
    pub max_in_flight: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub tag: String,
    pub context_tokens: usize,
    pub supports_streaming: bool,
    #[serde(default)]
    pub max_in_flight: Option<usize>,
}

pub trait Embedder: Send + Sync {
    fn spec(&self) -> &EmbedderSpec;

    /// Dense vector of `text`, of dimension `spec().dimension`.
    fn embed(&self, text: &str) -> Result<DenseVector, BackendError>;
}

pub trait PairScorer: Send + Sync {
    fn spec(&self) -> &ScorerSpec;

    /// Relevance of `passage` to `query` in `[0, 1]`.
    fn score_pair(&self, query: &str, passage: &str) -> Result<f64, BackendError>;

    /// Scores many passages against one query. Backends with a batch
    /// endpoint override this.
    fn score_batch(&self, query: &str, passages: &[&str]) -> Result<Vec<f64>, BackendError> {
        passages.iter().map(|p| self.score_pair(query, p)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerationParams {
    pub max_tokens: usize,
    pub temperature: f32,
}

impl Default for GenerationParams {
    fn default() -> Self {
        GenerationParams {
            max_tokens: 512,
            temperature: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinishReason {
    Stop,
    Length,
}

/// The completion marker that ends a generation stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    pub finish_reason: FinishReason,
    pub prompt_tokens: usize,
    pub completion_tokens: usize,
}

pub trait Generator: Send + Sync {
    fn spec(&self) -> &GeneratorSpec;

    /// Streams the completion of `prompt` token by token into `on_token`.
    ///
    /// On a mid-stream failure every token already passed to `on_token` is
    /// final and the error is returned.
    fn generate_stream(
        &self,
        prompt: &str,
        params: &GenerationParams,
        on_token: &mut dyn FnMut(&str),
    ) -> Result<Completion, BackendError>;

    fn generate(&self, prompt: &str, params: &GenerationParams) -> Result<Completion, BackendError> {
        self.generate_stream(prompt, params, &mut |_| {})
    }
}
