use std::sync::Arc;

use ragx_core::chunker::ChunkLimit;
use ragx_core::eval::{index_corpus, load, run_eval, DatasetKind, EvalConfig};
use ragx_core::pipeline::{ChatPipeline, LocalSource, PipelineConfig, SearchSource};
use ragx_core::retrieval::SearchOptions;
use ragx_service::{build_generator, build_scorer};

use super::embedder_for;
use crate::{CliError, EvalArgs};

pub fn run(cfg: &PipelineConfig, args: &EvalArgs) -> Result<(), CliError> {
    let k = args.k as usize;
    let kind = DatasetKind::from(args.dataset);
    let dataset = load(kind, &args.path)?;
    for w in &dataset.warnings {
        eprintln!("warning: {w}");
    }
    let max_tokens = args.chunk_tokens.unwrap_or(cfg.chunk_tokens);
    if max_tokens == 0 {
        return Err(CliError::Usage("--chunk-tokens must be positive".into()));
    }
    let embedder = embedder_for(cfg, None, None)?;
    let shard = index_corpus("eval", &dataset.corpus, ChunkLimit { max_tokens }, embedder.as_ref())?;
    let options = SearchOptions {
        k_rrf: cfg.k_rrf,
        depth_factor: cfg.depth_factor,
        ..SearchOptions::default()
    };
    let source = LocalSource::new(Arc::new(shard), embedder, options)
        .map_err(|e| CliError::config_key("backends.embedder", e.to_string()))?;
    let mut pcfg = cfg.clone();
    pcfg.top_k = k;
    pcfg.candidate_depth = pcfg.candidate_depth.max(k);
    pcfg.sources.clear();
    pcfg.mcp_endpoints.clear();
    let pipeline = ChatPipeline::new(
        pcfg,
        vec![Arc::new(source) as Arc<dyn SearchSource>],
        build_scorer(&cfg.backends.reranker)?,
        build_generator(&cfg.backends.generator)?,
        vec![],
    );
    let eval_cfg = EvalConfig {
        k,
        hits_mode: args.hits_mode.into(),
        parallelism: args.parallelism,
        rerank: !args.no_rerank,
    };
    let report = run_eval(&pipeline, &dataset.examples, &eval_cfg)?;
    print!("{}", report.to_table());
    if let Some(out) = &args.out {
        let text = if out.extension().is_some_and(|e| e == "txt") {
            report.to_table()
        } else {
            report.to_json()
        };
        std::fs::write(out, text).map_err(|e| CliError::io("report", format!("{}: {e}", out.display())))?;
    }
    println!("{}", report.summary_line());
    Ok(())
}
