use std::sync::Arc;

use ragx_core::index::load_shard;
use ragx_core::mcp::StubToolServer;
use ragx_core::pipeline::{LocalSource, PipelineConfig};
use ragx_core::retrieval::SearchOptions;
use ragx_service::mcp_http::stub_mcp_router;
use ragx_service::{build_pipeline, chat_router, serve_blocking, source_router};

use super::embedder_for;
use crate::{CliError, ServeArgs, ServeSourceArgs, StubMcpArgs};

fn bind_error(bind: &str) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::io("bind", format!("{bind}: {e}"))
}

pub fn serve_source(cfg: &PipelineConfig, args: &ServeSourceArgs) -> Result<(), CliError> {
    let shard = load_shard(&args.shard)?;
    let embedder = embedder_for(cfg, Some(&shard.embedder_tag), Some(shard.dimension))?;
    let options = SearchOptions {
        k_rrf: cfg.k_rrf,
        depth_factor: cfg.depth_factor,
        ..SearchOptions::default()
    };
    let source = LocalSource::new(Arc::new(shard), embedder, options)
        .map_err(|e| CliError::config_key("backends.embedder", e.to_string()))?;
    eprintln!(
        "serving shard {} ({} chunks) on {}",
        source.shard().shard_id,
        source.shard().len(),
        args.bind
    );
    serve_blocking(source_router(Arc::new(source)), &args.bind).map_err(bind_error(&args.bind))
}

pub fn serve(cfg: &PipelineConfig, args: &ServeArgs) -> Result<(), CliError> {
    let bind = args.bind.as_deref().unwrap_or(&cfg.bind);
    if let Some(dir) = &cfg.ui_dir {
        if !dir.is_dir() {
            return Err(CliError::config_key("ui_dir", format!("{} is not a directory", dir.display())));
        }
    }
    let pipeline = build_pipeline(cfg)?;
    eprintln!(
        "serving chat backend on {bind} ({} sources, {} tool endpoints, generator {})",
        pipeline.source_count(),
        pipeline.tool_endpoint_count(),
        pipeline.generator().spec().tag
    );
    serve_blocking(chat_router(Arc::new(pipeline), cfg.ui_dir.clone()), bind).map_err(bind_error(bind))
}

pub fn stub_mcp(args: &StubMcpArgs) -> Result<(), CliError> {
    eprintln!("serving stub MCP tools on {}", args.bind);
    serve_blocking(stub_mcp_router(Arc::new(StubToolServer::new())), &args.bind).map_err(bind_error(&args.bind))
}
