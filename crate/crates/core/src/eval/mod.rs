//! Retrieval-quality and latency evaluation over QA datasets.
//!
//! Relevance is judged by normalized substring containment of gold
//! evidence in chunk bodies, not by a language model.

pub mod datasets;
pub mod metrics;
pub mod needle;

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::Embedder;
use crate::chunker::{chunk_document, ChunkError, ChunkLimit, FixedClock};
use crate::index::{build_index, IndexError, IndexShard};
use crate::ingest::{ConverterRegistry, IngestError, RawArtifact};
use crate::pipeline::ChatPipeline;

pub use datasets::{load, load_mlqa, load_multihop, load_squad, Dataset, DatasetError, DatasetKind, QaExample};
pub use metrics::{context_precision_at_k, context_recall_at_k, hits_at_k, normalize_text, HitsMode};
pub use needle::{needle_dataset, needle_squad, NeedleSpec};

pub const RELEVANCE_LABEL: &str = "gold evidence contained in chunk (case- and whitespace-insensitive substring)";

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Chunk(#[from] ChunkError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error("k must be at least 1")]
    ZeroK,
    #[error("cannot build a thread pool: {0}")]
    Pool(String),
}

/// Converts, chunks and indexes a dataset corpus in memory. Chunk
/// timestamps are fixed so ids and shards are reproducible.
pub fn index_corpus(
    shard_id: &str,
    corpus: &[RawArtifact],
    limit: ChunkLimit,
    embedder: &dyn Embedder,
) -> Result<IndexShard, EvalError> {
    let registry = ConverterRegistry::default();
    let clock = FixedClock(chrono::DateTime::<chrono::Utc>::UNIX_EPOCH);
    let mut chunks = Vec::new();
    for artifact in corpus {
        let doc = registry.convert(artifact)?;
        chunks.extend(chunk_document(&doc, limit, &clock)?);
    }
    Ok(build_index(shard_id, chunks, embedder)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub k: usize,
    pub hits_mode: HitsMode,
    /// Worker threads; 0 uses one per core.
    pub parallelism: usize,
    pub rerank: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            k: 3,
            hits_mode: HitsMode::Any,
            parallelism: 0,
            rerank: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub qid: String,
    pub retrieved_ids: Vec<String>,
    pub context_precision: f64,
    pub context_recall: f64,
    pub hits: f64,
    pub latency_ms: f64,
    pub failed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Aggregates {
    pub context_precision: f64,
    pub context_recall: f64,
    pub hits: f64,
    pub latency_mean_ms: f64,
    pub latency_p95_ms: f64,
    /// Rows included in the means.
    pub evaluated: usize,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub k: usize,
    pub hits_mode: HitsMode,
    pub relevance: String,
    pub rows: Vec<EvalRow>,
    pub aggregates: Aggregates,
}

/// Nearest-rank percentile of unsorted samples; 0 for none.
pub fn percentile(samples: &[f64], p: f64) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = ((p / 100.0) * sorted.len() as f64).ceil().max(1.0) as usize;
    sorted[rank.min(sorted.len()) - 1]
}

fn mean(values: impl Iterator<Item = f64>) -> (f64, usize) {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        (0.0, 0)
    } else {
        (sum / n as f64, n)
    }
}

impl EvalReport {
    pub fn from_rows(k: usize, hits_mode: HitsMode, rows: Vec<EvalRow>) -> Self {
        let aggregates = Self::aggregate(&rows);
        EvalReport {
            k,
            hits_mode,
            relevance: RELEVANCE_LABEL.to_string(),
            rows,
            aggregates,
        }
    }

    fn aggregate(rows: &[EvalRow]) -> Aggregates {
        let ok: Vec<&EvalRow> = rows.iter().filter(|r| !r.failed).collect();
        let (context_precision, evaluated) = mean(ok.iter().map(|r| r.context_precision));
        let latencies: Vec<f64> = ok.iter().map(|r| r.latency_ms).collect();
        Aggregates {
            context_precision,
            context_recall: mean(ok.iter().map(|r| r.context_recall)).0,
            hits: mean(ok.iter().map(|r| r.hits)).0,
            latency_mean_ms: mean(latencies.iter().copied()).0,
            latency_p95_ms: percentile(&latencies, 95.0),
            evaluated,
            failures: rows.len() - ok.len(),
        }
    }

    /// Recomputes the aggregates from the rows and compares.
    pub fn verify(&self) -> Result<(), String> {
        let fresh = Self::aggregate(&self.rows);
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-9;
        let a = &self.aggregates;
        if a.evaluated != fresh.evaluated || a.failures != fresh.failures {
            return Err("row counts do not match the aggregates".into());
        }
        for (name, stored, recomputed) in [
            ("context_precision", a.context_precision, fresh.context_precision),
            ("context_recall", a.context_recall, fresh.context_recall),
            ("hits", a.hits, fresh.hits),
            ("latency_mean_ms", a.latency_mean_ms, fresh.latency_mean_ms),
            ("latency_p95_ms", a.latency_p95_ms, fresh.latency_p95_ms),
        ] {
            if !close(stored, recomputed) {
                return Err(format!("{name} is {stored} but the rows give {recomputed}"));
            }
        }
        for r in &self.rows {
            for m in [r.context_precision, r.context_recall, r.hits] {
                if !(0.0..=1.0).contains(&m) {
                    return Err(format!("{}: metric {m} outside [0, 1]", r.qid));
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports always serialize")
    }

    /// `CP@k=… CR@k=… Hits@k=… latency_mean=…ms p95=…ms`
    pub fn summary_line(&self) -> String {
        let a = &self.aggregates;
        let k = self.k;
        format!(
            "CP@{k}={:.3} CR@{k}={:.3} Hits@{k}={:.3} latency_mean={:.2}ms p95={:.2}ms",
            a.context_precision, a.context_recall, a.hits, a.latency_mean_ms, a.latency_p95_ms
        )
    }

    /// Rows and aggregates as an aligned plain-text table.
    pub fn to_table(&self) -> String {
        let k = self.k;
        let header = vec![
            "qid".to_string(),
            format!("CP@{k}"),
            format!("CR@{k}"),
            format!("Hits@{k}"),
            "latency_ms".to_string(),
            "status".to_string(),
        ];
        let fmt_row = |qid: &str, cp: f64, cr: f64, h: f64, l: f64, status: &str| {
            vec![
                qid.to_string(),
                format!("{cp:.3}"),
                format!("{cr:.3}"),
                format!("{h:.3}"),
                format!("{l:.2}"),
                status.to_string(),
            ]
        };
        let mut lines: Vec<Vec<String>> = vec![header];
        for r in &self.rows {
            let status = if r.failed { "failed" } else { "ok" };
            lines.push(fmt_row(&r.qid, r.context_precision, r.context_recall, r.hits, r.latency_ms, status));
        }
        let a = &self.aggregates;
        lines.push(fmt_row(
            "mean",
            a.context_precision,
            a.context_recall,
            a.hits,
            a.latency_mean_ms,
            &format!("{} ok, {} failed", a.evaluated, a.failures),
        ));
        let widths: Vec<usize> = (0..lines[0].len())
            .map(|c| lines.iter().map(|l| l[c].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for line in &lines {
            let cells: Vec<String> = line
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(c, (cell, &w))| if c == 0 { format!("{cell:<w$}") } else { format!("{cell:>w$}") })
                .collect();
            out.push_str(cells.join("  ").trim_end());
            out.push('\n');
        }
        out
    }
}

fn evaluate_one(pipeline: &ChatPipeline, example: &QaExample, cfg: &EvalConfig) -> EvalRow {
    let t0 = Instant::now();
    let outcome = pipeline.retrieve(&example.question, cfg.k, cfg.rerank);
    let latency_ms = t0.elapsed().as_secs_f64() * 1000.0;
    let bodies: Vec<&str> = outcome.chunks.iter().map(|c| c.chunk.body.as_str()).collect();
    let failed = outcome.source_count == 0 || outcome.failed_sources > 0;
    let golds = &example.gold_evidences;
    EvalRow {
        qid: example.qid.clone(),
        retrieved_ids: outcome.chunks.iter().map(|c| c.id().to_string()).collect(),
        context_precision: context_precision_at_k(&bodies, golds, cfg.k),
        context_recall: context_recall_at_k(&bodies, golds, cfg.k),
        hits: hits_at_k(&bodies, golds, cfg.k, cfg.hits_mode),
        latency_ms,
        failed,
        error: failed.then(|| outcome.warnings.join("; ")),
    }
}

/// Retrieves the top `k` chunks for every example through `pipeline` and
/// scores them. Rows keep the input order.
pub fn run_eval(pipeline: &ChatPipeline, examples: &[QaExample], cfg: &EvalConfig) -> Result<EvalReport, EvalError> {
    if cfg.k == 0 {
        return Err(EvalError::ZeroK);
    }
    let rows = if cfg.parallelism == 1 {
        examples.iter().map(|e| evaluate_one(pipeline, e, cfg)).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.parallelism)
            .build()
            .map_err(|e| EvalError::Pool(e.to_string()))?;
        pool.install(|| examples.par_iter().map(|e| evaluate_one(pipeline, e, cfg)).collect())
    };
    let report = EvalReport::from_rows(cfg.k, cfg.hits_mode, rows);
    debug_assert!(report.verify().is_ok());
    Ok(report)
}
