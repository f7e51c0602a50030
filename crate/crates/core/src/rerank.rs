//! Tournament reranking in token-budgeted batches.
//!
//! Candidates are packed into batches that fit the reranker's context, all
//! are scored, and the best `max(target_k, ⌈keep_fraction·n⌉)` survive into
//! the next round until at most `target_k` remain. Scores are cached, so a
//! chunk is scored once per call no matter how many rounds it survives.

use std::collections::HashMap;
use std::thread;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{BackendError, PairScorer};
use crate::retrieval::ScoredChunk;
use crate::tokenize::count_tokens;

pub const DEFAULT_TARGET_K: usize = 3;
pub const DEFAULT_CONTEXT_CAP: usize = 8192;
pub const DEFAULT_KEEP_FRACTION: f64 = 0.5;
const DEFAULT_IN_FLIGHT: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RerankConfig {
    pub target_k: usize,
    pub context_cap_tokens: usize,
    pub keep_fraction: f64,
}

impl Default for RerankConfig {
    fn default() -> Self {
        RerankConfig {
            target_k: DEFAULT_TARGET_K,
            context_cap_tokens: DEFAULT_CONTEXT_CAP,
            keep_fraction: DEFAULT_KEEP_FRACTION,
        }
    }
}

impl RerankConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.target_k == 0 {
            return Err("target_k must be at least 1".into());
        }
        if self.context_cap_tokens == 0 {
            return Err("context_cap_tokens must be positive".into());
        }
        if !(self.keep_fraction > 0.0 && self.keep_fraction <= 1.0) {
            return Err(format!("keep_fraction must lie in (0, 1], got {}", self.keep_fraction));
        }
        Ok(())
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum RerankError {
    #[error("chunk {chunk_id} needs {needed} tokens with the query, the reranker context is {cap}")]
    Oversize {
        chunk_id: String,
        needed: usize,
        cap: usize,
    },
    #[error("scoring failed: {0}")]
    Scorer(#[from] BackendError),
    #[error("scorer returned {score} for chunk {chunk_id}, outside [0, 1]")]
    ScoreOutOfRange { chunk_id: String, score: f64 },
    #[error("invalid rerank configuration: {0}")]
    Config(String),
}

/// First-fit decreasing packing. Returns batches of indices into
/// `candidates`; each batch satisfies `query_tokens + Σ token_count ≤ cap`.
pub fn batch_pack(
    candidates: &[ScoredChunk],
    query_tokens: usize,
    cap: usize,
) -> Result<Vec<Vec<usize>>, RerankError> {
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| {
        let (ca, cb) = (&candidates[a].chunk, &candidates[b].chunk);
        cb.token_count.cmp(&ca.token_count).then_with(|| ca.id.cmp(&cb.id))
    });
    let mut batches: Vec<(usize, Vec<usize>)> = Vec::new();
    for i in order {
        let tokens = candidates[i].chunk.token_count as usize;
        if query_tokens + tokens > cap {
            return Err(RerankError::Oversize {
                chunk_id: candidates[i].chunk.id.clone(),
                needed: query_tokens + tokens,
                cap,
            });
        }
        match batches.iter_mut().find(|(used, _)| used + tokens <= cap) {
            Some((used, members)) => {
                *used += tokens;
                members.push(i);
            }
            None => batches.push((query_tokens + tokens, vec![i])),
        }
    }
    Ok(batches.into_iter().map(|(_, members)| members).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RerankOutcome {
    /// At most `target_k` chunks, best first, each with `rerank` set.
    pub chunks: Vec<ScoredChunk>,
    /// Loop iterations, including the final one that only sorts.
    pub rounds: usize,
    /// Token cost (query included) of every batch sent to the scorer.
    pub batch_costs: Vec<usize>,
    pub pairs_scored: usize,
}

/// Upper bound on [`RerankOutcome::rounds`] for a keep fraction of 0.5:
/// `⌈log₂(n/k)⌉ + 1`, with the logarithm clamped at zero.
pub fn round_bound(n: usize, k: usize) -> usize {
    if n <= k {
        return 1;
    }
    let mut rounds = 1;
    let mut size = n;
    while size > k {
        size = size.div_ceil(2);
        rounds += 1;
    }
    rounds
}

fn score_batches(
    query: &str,
    pool: &[ScoredChunk],
    batches: &[Vec<usize>],
    scorer: &dyn PairScorer,
) -> Result<Vec<(usize, f64)>, RerankError> {
    let score_one = |batch: &Vec<usize>| -> Result<Vec<(usize, f64)>, RerankError> {
        let passages: Vec<&str> = batch.iter().map(|&i| pool[i].chunk.body.as_str()).collect();
        let scores = scorer.score_batch(query, &passages)?;
        if scores.len() != batch.len() {
            return Err(BackendError::Protocol(format!(
                "{} scores for {} passages",
                scores.len(),
                batch.len()
            ))
            .into());
        }
        for (&i, &s) in batch.iter().zip(&scores) {
            if !(0.0..=1.0).contains(&s) {
                return Err(RerankError::ScoreOutOfRange {
                    chunk_id: pool[i].chunk.id.clone(),
                    score: s,
                });
            }
        }
        Ok(batch.iter().copied().zip(scores).collect())
    };
    let window = scorer.spec().max_in_flight.unwrap_or(DEFAULT_IN_FLIGHT).max(1);
    if window == 1 || batches.len() == 1 {
        return Ok(batches.iter().map(score_one).collect::<Result<Vec<_>, _>>()?.concat());
    }
    let mut out = Vec::new();
    for group in batches.chunks(window) {
        let results: Vec<Result<Vec<(usize, f64)>, RerankError>> = thread::scope(|s| {
            let handles: Vec<_> = group.iter().map(|b| s.spawn(|| score_one(b))).collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("scoring thread panicked"))
                .collect()
        });
        for r in results {
            out.extend(r?);
        }
    }
    Ok(out)
}

fn by_rerank_then_id(a: &ScoredChunk, b: &ScoredChunk) -> std::cmp::Ordering {
    let (sa, sb) = (a.rerank.unwrap_or(f64::NEG_INFINITY), b.rerank.unwrap_or(f64::NEG_INFINITY));
    sb.total_cmp(&sa).then_with(|| a.chunk.id.cmp(&b.chunk.id))
}

/// Reduces `candidates` to the best `cfg.target_k` by scorer relevance.
pub fn rerank_reduce(
    query: &str,
    candidates: Vec<ScoredChunk>,
    cfg: &RerankConfig,
    scorer: &dyn PairScorer,
) -> Result<RerankOutcome, RerankError> {
    cfg.validate().map_err(RerankError::Config)?;
    let query_tokens = count_tokens(query);
    let mut cache: HashMap<String, f64> = HashMap::new();
    let mut pool = candidates;
    let mut rounds = 0;
    let mut batch_costs = Vec::new();
    let mut pairs_scored = 0;
    loop {
        rounds += 1;
        let unscored: Vec<ScoredChunk> = pool
            .iter()
            .filter(|c| !cache.contains_key(&c.chunk.id))
            .cloned()
            .collect();
        if !unscored.is_empty() {
            let batches = batch_pack(&unscored, query_tokens, cfg.context_cap_tokens)?;
            for b in &batches {
                batch_costs.push(query_tokens + b.iter().map(|&i| unscored[i].chunk.token_count as usize).sum::<usize>());
            }
            for (i, s) in score_batches(query, &unscored, &batches, scorer)? {
                pairs_scored += 1;
                cache.insert(unscored[i].chunk.id.clone(), s);
            }
        }
        for c in &mut pool {
            c.rerank = cache.get(&c.chunk.id).copied();
        }
        pool.sort_by(by_rerank_then_id);
        if pool.len() <= cfg.target_k {
            return Ok(RerankOutcome {
                chunks: pool,
                rounds,
                batch_costs,
                pairs_scored,
            });
        }
        let n = pool.len();
        let keep = cfg
            .target_k
            .max((cfg.keep_fraction * n as f64).ceil() as usize)
            .min(n - 1);
        pool.truncate(keep);
    }
}
