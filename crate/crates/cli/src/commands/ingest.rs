use std::path::Path;

use chrono::Utc;

use ragx_core::chunker::{chunk_document, ChunkLimit, SystemClock};
use ragx_core::index::{build_index, save_shard};
use ragx_core::ingest::{read_directory, read_manifest, ConverterRegistry, RawArtifact};
use ragx_core::pipeline::PipelineConfig;

use super::embedder_for;
use crate::{CliError, IngestArgs};

fn read_input(args: &IngestArgs) -> Result<Vec<RawArtifact>, CliError> {
    let input = &args.input;
    let meta = std::fs::metadata(input).map_err(|e| CliError::io("input", format!("{}: {e}", input.display())))?;
    if meta.is_dir() {
        let source_id = match &args.source_id {
            Some(id) => id.clone(),
            None => dir_name(input),
        };
        Ok(read_directory(input, &source_id, Utc::now())?)
    } else {
        Ok(read_manifest(input, Utc::now())?)
    }
}

fn dir_name(path: &Path) -> String {
    path.canonicalize()
        .ok()
        .and_then(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
        .unwrap_or_else(|| "local".into())
}

pub fn run(cfg: &PipelineConfig, args: &IngestArgs) -> Result<(), CliError> {
    let max_tokens = args.chunk_tokens.unwrap_or(cfg.chunk_tokens);
    if max_tokens == 0 {
        return Err(CliError::Usage("--chunk-tokens must be positive".into()));
    }
    let artifacts = read_input(args)?;
    if artifacts.is_empty() {
        return Err(CliError::io("input", format!("{}: no documents found", args.input.display())));
    }
    let registry = ConverterRegistry::default();
    let mut chunks = Vec::new();
    for artifact in &artifacts {
        let doc = registry.convert(artifact)?;
        chunks.extend(chunk_document(&doc, ChunkLimit { max_tokens }, &SystemClock)?);
    }
    let embedder = embedder_for(cfg, args.embedder.as_deref(), None)?;
    let shard_id = match &args.shard_id {
        Some(id) => id.clone(),
        None => args
            .out
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "shard".into()),
    };
    let shard = build_index(&shard_id, chunks, embedder.as_ref())?;
    save_shard(&shard, &args.out)?;
    let tokens: u64 = shard.chunks.iter().map(|c| u64::from(c.chunk.token_count)).sum();
    println!("documents: {}", artifacts.len());
    println!("chunks: {}", shard.len());
    println!("tokens: {tokens}");
    println!("shard: {} embedder={} dimension={}", shard.shard_id, shard.embedder_tag, shard.dimension);
    println!("out: {}", args.out.display());
    Ok(())
}
