//! Builds backends, sources, tool endpoints and the pipeline from a
//! [`PipelineConfig`].

use std::sync::Arc;
use std::time::Duration;

use thiserror::Error;

use ragx_core::backends::{
    BackendError, Embedder, Generator, HashingEmbedder, LexicalOverlapScorer, PairScorer, TemplateEchoGenerator,
    HASH_EMBEDDER_DIMENSION,
};
use ragx_core::mcp::{McpError, ToolEndpoint};
use ragx_core::pipeline::{BackendConfig, BackendKind, ChatPipeline, PipelineConfig, SearchSource};

use crate::http_source::HttpSource;
use crate::mcp_http;
use crate::model_http::{HttpEmbedder, HttpGenerator, HttpModel, HttpScorer};

const DEFAULT_EMBED_INPUT_TOKENS: usize = 512;
const DEFAULT_CONTEXT_TOKENS: usize = 8192;
const DEFAULT_GENERATOR_CONTEXT_TOKENS: usize = 32768;

#[derive(Debug, Error)]
pub enum BuildError {
    #[error("backends.{role}: {message}")]
    Config { role: &'static str, message: String },
    #[error("backends.{role}: {source}")]
    Backend {
        role: &'static str,
        #[source]
        source: BackendError,
    },
    #[error("source {url}: {message}")]
    Source { url: String, message: String },
    #[error("mcp endpoint {name}: {source}")]
    Mcp {
        name: String,
        #[source]
        source: McpError,
    },
}

fn http_model(role: &'static str, cfg: &BackendConfig) -> Result<HttpModel, BuildError> {
    let missing = |field: &str| BuildError::Config {
        role,
        message: format!("`{field}` is required for an http backend"),
    };
    Ok(HttpModel {
        base_url: cfg.url.clone().ok_or_else(|| missing("url"))?,
        model: cfg.model.clone().ok_or_else(|| missing("model"))?,
        api_key: cfg.api_key.clone(),
        timeout: Duration::from_millis(cfg.timeout_ms),
    })
}

pub fn build_embedder(cfg: &BackendConfig) -> Result<Arc<dyn Embedder>, BuildError> {
    const ROLE: &str = "embedder";
    match cfg.kind {
        BackendKind::Mock => Ok(Arc::new(HashingEmbedder::new(cfg.dimension.unwrap_or(HASH_EMBEDDER_DIMENSION)))),
        BackendKind::Http => {
            let dimension = cfg.dimension.ok_or(BuildError::Config {
                role: ROLE,
                message: "`dimension` is required for an http embedder".into(),
            })?;
            let e = HttpEmbedder::new(
                http_model(ROLE, cfg)?,
                dimension,
                cfg.context_tokens.unwrap_or(DEFAULT_EMBED_INPUT_TOKENS),
                cfg.max_in_flight,
            )
            .map_err(|source| BuildError::Backend { role: ROLE, source })?;
            Ok(Arc::new(e))
        }
    }
}

pub fn build_scorer(cfg: &BackendConfig) -> Result<Arc<dyn PairScorer>, BuildError> {
    const ROLE: &str = "reranker";
    let context = cfg.context_tokens.unwrap_or(DEFAULT_CONTEXT_TOKENS);
    match cfg.kind {
        BackendKind::Mock => Ok(Arc::new(LexicalOverlapScorer::new(context))),
        BackendKind::Http => {
            let s = HttpScorer::new(http_model(ROLE, cfg)?, context, cfg.max_in_flight)
                .map_err(|source| BuildError::Backend { role: ROLE, source })?;
            Ok(Arc::new(s))
        }
    }
}

pub fn build_generator(cfg: &BackendConfig) -> Result<Arc<dyn Generator>, BuildError> {
    const ROLE: &str = "generator";
    let context = cfg.context_tokens.unwrap_or(DEFAULT_GENERATOR_CONTEXT_TOKENS);
    match cfg.kind {
        BackendKind::Mock => Ok(Arc::new(TemplateEchoGenerator::new(context))),
        BackendKind::Http => {
            let g = HttpGenerator::new(http_model(ROLE, cfg)?, context, cfg.max_in_flight)
                .map_err(|source| BuildError::Backend { role: ROLE, source })?;
            Ok(Arc::new(g))
        }
    }
}

/// A pipeline reaching its sources and tool endpoints over HTTP.
pub fn build_pipeline(cfg: &PipelineConfig) -> Result<ChatPipeline, BuildError> {
    let timeout = Duration::from_millis(cfg.source_timeout_ms);
    let sources = cfg
        .sources
        .iter()
        .map(|url| {
            HttpSource::new(url, timeout)
                .map(|s| Arc::new(s) as Arc<dyn SearchSource>)
                .map_err(|e| BuildError::Source {
                    url: url.clone(),
                    message: e.to_string(),
                })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let tools = cfg
        .mcp_endpoints
        .iter()
        .map(|ep| {
            mcp_http::connect(ep.clone())
                .map(|c| Arc::new(c) as Arc<dyn ToolEndpoint>)
                .map_err(|source| BuildError::Mcp {
                    name: ep.name.clone(),
                    source,
                })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ChatPipeline::new(
        cfg.clone(),
        sources,
        build_scorer(&cfg.backends.reranker)?,
        build_generator(&cfg.backends.generator)?,
        tools,
    ))
}
