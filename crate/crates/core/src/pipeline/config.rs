//! Service configuration, loaded from TOML or JSON.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::GenerationParams;
use crate::chunker::DEFAULT_CHUNK_TOKENS;
use crate::mcp::McpEndpoint;
use crate::prompt::{Budget, DEFAULT_SECTION_OVERHEAD};
use crate::rerank::{DEFAULT_CONTEXT_CAP, DEFAULT_KEEP_FRACTION};
use crate::retrieval::{DEFAULT_DEPTH_FACTOR, DEFAULT_K_RRF};

pub const CONFIG_ENV: &str = "RAGX_CONFIG";
pub const BACKEND_URL_ENV: &str = "RAGX_BACKEND_URL";
pub const DEFAULT_PREAMBLE: &str = "You are a ChatOps assistant for the operations team. Answer from the \
numbered context entries and cite them as [n]. If the context does not answer the question, say so.";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config syntax error: {0}")]
    Syntax(String),
    #[error("config key `{key}`: {message}")]
    Invalid { key: String, message: String },
}

impl ConfigError {
    /// The offending key, when known.
    pub fn key(&self) -> Option<&str> {
        match self {
            ConfigError::Invalid { key, .. } => Some(key),
            _ => None,
        }
    }

    fn invalid(key: &str, message: impl Into<String>) -> Self {
        ConfigError::Invalid {
            key: key.to_string(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Mock,
    /// An OpenAI-compatible model server.
    Http,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub url: Option<String>,
    pub model: Option<String>,
    /// Embedding dimension (embedders only).
    pub dimension: Option<usize>,
    /// Model context in tokens.
    pub context_tokens: Option<usize>,
    pub max_in_flight: Option<usize>,
    pub timeout_ms: u64,
    pub api_key: Option<String>,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            kind: BackendKind::Mock,
            url: None,
            model: None,
            dimension: None,
            context_tokens: None,
            max_in_flight: None,
            timeout_ms: 30_000,
            api_key: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct BackendsConfig {
    pub embedder: BackendConfig,
    pub reranker: BackendConfig,
    pub generator: BackendConfig,
}

impl BackendsConfig {
    /// Points every HTTP backend at `url`.
    pub fn override_url(&mut self, url: &str) {
        for b in [&mut self.embedder, &mut self.reranker, &mut self.generator] {
            if b.kind == BackendKind::Http {
                b.url = Some(url.to_string());
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RerankSettings {
    pub enabled: bool,
    pub context_cap_tokens: usize,
    pub keep_fraction: f64,
}

impl Default for RerankSettings {
    fn default() -> Self {
        RerankSettings {
            enabled: true,
            context_cap_tokens: DEFAULT_CONTEXT_CAP,
            keep_fraction: DEFAULT_KEEP_FRACTION,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    /// Chunks kept after reranking.
    pub top_k: usize,
    /// Candidates requested from each source and kept after merging.
    pub candidate_depth: usize,
    pub k_rrf: u32,
    pub depth_factor: usize,
    /// Number of most recent user messages that form the retrieval query.
    pub retrieval_query_turns: usize,
    pub rerank: RerankSettings,
    pub budget: Budget,
    pub section_overhead_tokens: usize,
    pub chunk_tokens: usize,
    pub system_preamble: String,
    pub generation: GenerationParams,
    /// Base URLs of source services.
    pub sources: Vec<String>,
    pub source_timeout_ms: u64,
    pub mcp_endpoints: Vec<McpEndpoint>,
    pub backends: BackendsConfig,
    pub bind: String,
    /// Directory with the static chat client, served under `/ui`.
    pub ui_dir: Option<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            top_k: 3,
            candidate_depth: 12,
            k_rrf: DEFAULT_K_RRF,
            depth_factor: DEFAULT_DEPTH_FACTOR,
            retrieval_query_turns: 1,
            rerank: RerankSettings::default(),
            budget: Budget::default(),
            section_overhead_tokens: DEFAULT_SECTION_OVERHEAD,
            chunk_tokens: DEFAULT_CHUNK_TOKENS,
            system_preamble: DEFAULT_PREAMBLE.to_string(),
            generation: GenerationParams::default(),
            sources: Vec::new(),
            source_timeout_ms: 2000,
            mcp_endpoints: Vec::new(),
            backends: BackendsConfig::default(),
            bind: "127.0.0.1:8080".into(),
            ui_dir: None,
        }
    }
}

fn is_http_url(url: &str) -> bool {
    url.strip_prefix("http://")
        .or_else(|| url.strip_prefix("https://"))
        .is_some_and(|rest| !rest.is_empty() && !rest.starts_with('/'))
}

impl PipelineConfig {
    pub fn from_json_str(text: &str) -> Result<Self, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: PipelineConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let key = e.path().to_string();
            let inner = e.into_inner();
            if inner.is_syntax() || inner.is_eof() {
                ConfigError::Syntax(inner.to_string())
            } else {
                ConfigError::invalid(&key, inner.to_string())
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let value: toml::Table = toml::from_str(text).map_err(|e| ConfigError::Syntax(e.to_string()))?;
        let cfg: PipelineConfig = serde_path_to_error::deserialize(toml::Value::Table(value)).map_err(|e| {
            let key = e.path().to_string();
            ConfigError::invalid(&key, e.into_inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path`, as JSON when it ends in `.json` and TOML otherwise, and
    /// applies the backend URL override from the environment.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = if path.extension().is_some_and(|e| e == "json") {
            Self::from_json_str(&text)?
        } else {
            Self::from_toml_str(&text)?
        };
        cfg.apply_env();
        Ok(cfg)
    }

    pub fn apply_env(&mut self) {
        if let Ok(url) = std::env::var(BACKEND_URL_ENV) {
            if !url.is_empty() {
                self.backends.override_url(&url);
            }
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.top_k == 0 {
            return Err(ConfigError::invalid("top_k", "must be at least 1"));
        }
        if self.candidate_depth < self.top_k {
            return Err(ConfigError::invalid(
                "candidate_depth",
                format!("must be at least top_k ({})", self.top_k),
            ));
        }
        if self.depth_factor == 0 {
            return Err(ConfigError::invalid("depth_factor", "must be at least 1"));
        }
        if self.retrieval_query_turns == 0 {
            return Err(ConfigError::invalid("retrieval_query_turns", "must be at least 1"));
        }
        if self.chunk_tokens == 0 {
            return Err(ConfigError::invalid("chunk_tokens", "must be positive"));
        }
        if self.rerank.context_cap_tokens == 0 {
            return Err(ConfigError::invalid("rerank.context_cap_tokens", "must be positive"));
        }
        if !(self.rerank.keep_fraction > 0.0 && self.rerank.keep_fraction <= 1.0) {
            return Err(ConfigError::invalid("rerank.keep_fraction", "must lie in (0, 1]"));
        }
        self.budget.validate().map_err(|m| ConfigError::invalid("budget", m))?;
        if self.source_timeout_ms == 0 {
            return Err(ConfigError::invalid("source_timeout_ms", "must be positive"));
        }
        for (i, url) in self.sources.iter().enumerate() {
            if !is_http_url(url) {
                return Err(ConfigError::invalid(
                    &format!("sources[{i}]"),
                    format!("`{url}` is not an absolute http(s) URL"),
                ));
            }
        }
        let mut names = std::collections::BTreeSet::new();
        for (i, ep) in self.mcp_endpoints.iter().enumerate() {
            ep.validate()
                .map_err(|m| ConfigError::invalid(&format!("mcp_endpoints[{i}]"), m))?;
            if !names.insert(ep.name.as_str()) {
                return Err(ConfigError::invalid(
                    &format!("mcp_endpoints[{i}].name"),
                    format!("duplicate endpoint name `{}`", ep.name),
                ));
            }
        }
        for (name, b) in [
            ("embedder", &self.backends.embedder),
            ("reranker", &self.backends.reranker),
            ("generator", &self.backends.generator),
        ] {
            if let Some(url) = &b.url {
                if !is_http_url(url) {
                    return Err(ConfigError::invalid(
                        &format!("backends.{name}.url"),
                        format!("`{url}` is not an absolute http(s) URL"),
                    ));
                }
            }
            if b.kind == BackendKind::Http && b.url.is_none() && std::env::var(BACKEND_URL_ENV).is_err() {
                return Err(ConfigError::invalid(
                    &format!("backends.{name}.url"),
                    format!("required for an http backend unless {BACKEND_URL_ENV} is set"),
                ));
            }
            if b.timeout_ms == 0 {
                return Err(ConfigError::invalid(&format!("backends.{name}.timeout_ms"), "must be positive"));
            }
        }
        if self.generation.max_tokens == 0 {
            return Err(ConfigError::invalid("generation.max_tokens", "must be positive"));
        }
        Ok(())
    }
}
