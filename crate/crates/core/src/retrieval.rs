//! Exhaustive hybrid search inside one shard: Okapi BM25, cosine similarity,
//! reciprocal rank fusion and duplicate elimination.

use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{BackendError, Embedder};
use crate::chunker::Chunk;
use crate::index::{CorpusStats, DenseVector, IndexShard, SparseVector};
use crate::tokenize::{lowercase_tokens, truncate_to_tokens};

pub const DEFAULT_K_RRF: u32 = 60;
pub const DEFAULT_DEPTH_FACTOR: usize = 4;

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("query vector has dimension {got}, shard expects {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("embedding the query failed: {0}")]
    Embed(#[from] BackendError),
    #[error("top_k must be at least 1")]
    ZeroTopK,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params { k1: 1.2, b: 0.75 }
    }
}

impl Bm25Params {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.k1 > 0.0) {
            return Err(format!("k1 must be positive, got {}", self.k1));
        }
        if !(0.0..=1.0).contains(&self.b) {
            return Err(format!("b must lie in [0, 1], got {}", self.b));
        }
        Ok(())
    }
}

/// A chunk with its score breakdown. Serializes flat, which is also the
/// source service's wire format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredChunk {
    #[serde(flatten)]
    pub chunk: Chunk,
    #[serde(default)]
    pub bm25: f64,
    #[serde(default)]
    pub cosine: f64,
    #[serde(default)]
    pub fused: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rerank: Option<f64>,
}

impl ScoredChunk {
    pub fn new(chunk: Chunk) -> Self {
        ScoredChunk {
            chunk,
            bm25: 0.0,
            cosine: 0.0,
            fused: 0.0,
            rerank: None,
        }
    }

    pub fn id(&self) -> &str {
        &self.chunk.id
    }
}

/// Distinct lowercased query tokens in ascending order.
pub fn query_terms(query: &str) -> Vec<String> {
    let mut terms: Vec<String> = lowercase_tokens(query).collect();
    terms.sort();
    terms.dedup();
    terms
}

/// `ln(1 + (N - df + 0.5) / (df + 0.5))`, never negative.
pub fn idf(doc_count: usize, df: u32) -> f64 {
    let n = doc_count as f64;
    let df = f64::from(df);
    (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
}

/// Okapi BM25 of one chunk. `query_terms` is treated as a set.
pub fn bm25_score(
    query_terms: &[String],
    doc: &SparseVector,
    doc_len: u32,
    stats: &CorpusStats,
    params: Bm25Params,
) -> f64 {
    let avgdl = if stats.avg_doc_len > 0.0 { stats.avg_doc_len } else { 1.0 };
    let norm = params.k1 * (1.0 - params.b + params.b * f64::from(doc_len) / avgdl);
    query_terms
        .iter()
        .map(|t| {
            let tf = doc.tf(t);
            if tf == 0 {
                return 0.0;
            }
            let tf = f64::from(tf);
            idf(stats.doc_count, stats.df(t)) * tf * (params.k1 + 1.0) / (tf + norm)
        })
        .sum()
}

fn by_score_then_id(a: (f64, &str), b: (f64, &str)) -> Ordering {
    b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1))
}

/// At most `n` chunks with positive BM25, best first, ties by ascending id.
pub fn bm25_topn(query: &str, shard: &IndexShard, n: usize, params: Bm25Params) -> Vec<ScoredChunk> {
    let terms = query_terms(query);
    if terms.is_empty() || n == 0 {
        return Vec::new();
    }
    let mut hits: Vec<(f64, usize)> = shard
        .chunks
        .iter()
        .enumerate()
        .filter(|(_, c)| terms.iter().any(|t| c.sparse.tf(t) > 0))
        .map(|(i, c)| (bm25_score(&terms, &c.sparse, c.chunk.token_count, &shard.stats, params), i))
        .filter(|&(s, _)| s > 0.0)
        .collect();
    hits.sort_by(|a, b| {
        by_score_then_id((a.0, &shard.chunks[a.1].chunk.id), (b.0, &shard.chunks[b.1].chunk.id))
    });
    hits.truncate(n);
    hits.into_iter()
        .map(|(score, i)| ScoredChunk {
            bm25: score,
            ..ScoredChunk::new(shard.chunks[i].chunk.clone())
        })
        .collect()
}

/// At most `n` chunks by dot product with `query`, best first, ties by id.
pub fn cosine_topn(query: &DenseVector, shard: &IndexShard, n: usize) -> Result<Vec<ScoredChunk>, RetrievalError> {
    if query.dimension() != shard.dimension {
        return Err(RetrievalError::Dimension {
            expected: shard.dimension,
            got: query.dimension(),
        });
    }
    let mut hits: Vec<(f64, usize)> = shard
        .chunks
        .iter()
        .enumerate()
        .map(|(i, c)| (query.dot(&c.dense), i))
        .collect();
    hits.sort_by(|a, b| {
        by_score_then_id((a.0, &shard.chunks[a.1].chunk.id), (b.0, &shard.chunks[b.1].chunk.id))
    });
    hits.truncate(n);
    Ok(hits
        .into_iter()
        .map(|(score, i)| ScoredChunk {
            cosine: score,
            ..ScoredChunk::new(shard.chunks[i].chunk.clone())
        })
        .collect())
}

/// Reciprocal rank fusion: `Σ 1/(k_rrf + rank)` over the rankings that
/// contain a chunk, ranks starting at 1. Only the first occurrence of an id
/// within one ranking counts.
pub fn fuse_rrf(rankings: &[Vec<ScoredChunk>], k_rrf: u32) -> Vec<ScoredChunk> {
    let mut fused: Vec<ScoredChunk> = Vec::new();
    let mut slot: HashMap<String, usize> = HashMap::new();
    for ranking in rankings {
        let mut seen: HashSet<&str> = HashSet::new();
        let mut rank = 0u64;
        for item in ranking {
            if !seen.insert(item.id()) {
                continue;
            }
            rank += 1;
            let contribution = 1.0 / (f64::from(k_rrf) + rank as f64);
            match slot.get(item.id()) {
                Some(&i) => {
                    let entry = &mut fused[i];
                    entry.fused += contribution;
                    entry.bm25 = entry.bm25.max(item.bm25);
                    entry.cosine = entry.cosine.max(item.cosine);
                }
                None => {
                    slot.insert(item.id().to_string(), fused.len());
                    fused.push(ScoredChunk {
                        fused: contribution,
                        rerank: None,
                        ..item.clone()
                    });
                }
            }
        }
    }
    fused.sort_by(|a, b| by_score_then_id((a.fused, a.id()), (b.fused, b.id())));
    fused
}

/// Keeps the first occurrence of every chunk id, preserving order.
pub fn dedup(chunks: Vec<ScoredChunk>) -> Vec<ScoredChunk> {
    let mut seen = HashSet::new();
    chunks
        .into_iter()
        .filter(|c| seen.insert(c.chunk.id.clone()))
        .collect()
}

/// Orders by fused score descending, ids ascending on ties.
pub fn sort_by_fused(chunks: &mut [ScoredChunk]) {
    chunks.sort_by(|a, b| by_score_then_id((a.fused, a.id()), (b.fused, b.id())));
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchOptions {
    pub k_rrf: u32,
    /// Each ranking is cut to `depth_factor × top_k` before fusion.
    pub depth_factor: usize,
    pub bm25: Bm25Params,
}

impl Default for SearchOptions {
    fn default() -> Self {
        SearchOptions {
            k_rrf: DEFAULT_K_RRF,
            depth_factor: DEFAULT_DEPTH_FACTOR,
            bm25: Bm25Params::default(),
        }
    }
}

/// BM25 and dense rankings fused by RRF, deduplicated and cut to `top_k`.
/// A query without tokens embeds to the zero vector and is ranked by BM25
/// alone, which then finds nothing.
pub fn hybrid_search(
    query: &str,
    shard: &IndexShard,
    embedder: &dyn Embedder,
    top_k: usize,
    options: &SearchOptions,
) -> Result<Vec<ScoredChunk>, RetrievalError> {
    if top_k == 0 {
        return Err(RetrievalError::ZeroTopK);
    }
    let depth = top_k.saturating_mul(options.depth_factor.max(1));
    let mut rankings = vec![bm25_topn(query, shard, depth, options.bm25)];
    let text = truncate_to_tokens(query, embedder.spec().max_input_tokens);
    let qvec = embedder.embed(text)?.normalized();
    if qvec.norm() > 0.0 {
        rankings.push(cosine_topn(&qvec, shard, depth)?);
    }
    let mut fused = dedup(fuse_rrf(&rankings, options.k_rrf));
    fused.truncate(top_k);
    Ok(fused)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::HashingEmbedder;
    use crate::chunker::make_chunk_id;
    use crate::index::{build_index, IndexedChunk};
    use chrono::{TimeZone, Utc};
    use proptest::prelude::*;

    fn chunk(id: &str, body: &str) -> Chunk {
        Chunk {
            id: id.into(),
            source_id: "s".into(),
            uri: format!("mem://{id}"),
            heading_path: vec![],
            body: body.into(),
            token_count: crate::count_tokens(body) as u32,
            created_at: Utc.timestamp_millis_opt(0).unwrap(),
        }
    }

    fn shard(bodies: &[&str]) -> IndexShard {
        let chunks = bodies
            .iter()
            .map(|b| chunk(&make_chunk_id("s", &[], b), b))
            .collect();
        build_index("s", chunks, &HashingEmbedder::default()).unwrap()
    }

    fn scored(id: &str) -> ScoredChunk {
        ScoredChunk::new(chunk(id, id))
    }

    #[test]
    fn worked_bm25_value() {
        let s = shard(&["paris"]);
        let score = bm25_score(&query_terms("paris"), &s.chunks[0].sparse, 1, &s.stats, Bm25Params::default());
        let expected = (4.0f64 / 3.0).ln() * 2.2 / 2.2;
        assert!((score - expected).abs() < 1e-12);
        assert!((score - 0.28768).abs() < 1e-5);
    }

    #[test]
    fn absent_terms_score_zero() {
        let s = shard(&["alpha beta"]);
        assert_eq!(
            bm25_score(&query_terms("gamma"), &s.chunks[0].sparse, 2, &s.stats, Bm25Params::default()),
            0.0
        );
        assert!(bm25_topn("gamma delta", &s, 5, Bm25Params::default()).is_empty());
    }

    #[test]
    fn single_chunk_hit() {
        let s = shard(&["alpha beta"]);
        let hits = bm25_topn("beta", &s, 5, Bm25Params::default());
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].id(), s.chunks[0].chunk.id);
    }

    #[test]
    fn bm25_ties_break_on_id() {
        let s = IndexShard::from_parts(
            "s",
            "t",
            1,
            ["b", "a", "c"]
                .iter()
                .map(|id| IndexedChunk {
                    chunk: chunk(id, "same text"),
                    sparse: SparseVector::from_text("same text"),
                    dense: DenseVector(vec![1.0]),
                })
                .collect(),
        );
        let ids: Vec<String> = bm25_topn("same", &s, 3, Bm25Params::default())
            .iter()
            .map(|c| c.id().to_string())
            .collect();
        assert_eq!(ids, ["a", "b", "c"]);
        let ids: Vec<String> = cosine_topn(&DenseVector(vec![1.0]), &s, 2)
            .unwrap()
            .iter()
            .map(|c| c.id().to_string())
            .collect();
        assert_eq!(ids, ["a", "b"]);
    }

    #[test]
    fn cosine_identity_and_orthogonal() {
        let s = IndexShard::from_parts(
            "s",
            "t",
            2,
            vec![
                IndexedChunk {
                    chunk: chunk("x", "x"),
                    sparse: SparseVector::default(),
                    dense: DenseVector(vec![1.0, 0.0]),
                },
                IndexedChunk {
                    chunk: chunk("y", "y"),
                    sparse: SparseVector::default(),
                    dense: DenseVector(vec![0.0, 1.0]),
                },
            ],
        );
        let hits = cosine_topn(&DenseVector(vec![1.0, 0.0]), &s, 2).unwrap();
        assert_eq!(hits[0].id(), "x");
        assert_eq!(hits[0].cosine, 1.0);
        assert_eq!(hits[1].cosine, 0.0);
        assert!(matches!(
            cosine_topn(&DenseVector(vec![1.0]), &s, 2),
            Err(RetrievalError::Dimension { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn rrf_examples() {
        let one = fuse_rrf(&[vec![scored("a")]], 60);
        assert!((one[0].fused - 1.0 / 61.0).abs() < 1e-15);
        let two = fuse_rrf(&[vec![scored("a")], vec![scored("a")]], 60);
        assert_eq!(two.len(), 1);
        assert!((two[0].fused - 2.0 / 61.0).abs() < 1e-15);
    }

    #[test]
    fn rrf_carries_maximum_scores() {
        let mut a1 = scored("a");
        a1.bm25 = 3.0;
        let mut a2 = scored("a");
        a2.cosine = 0.5;
        let fused = fuse_rrf(&[vec![a1], vec![a2]], 60);
        assert_eq!((fused[0].bm25, fused[0].cosine), (3.0, 0.5));
    }

    #[test]
    fn dedup_examples() {
        let ids = |v: Vec<ScoredChunk>| v.iter().map(|c| c.id().to_string()).collect::<Vec<_>>();
        assert_eq!(ids(dedup(vec![scored("a"), scored("b"), scored("a")])), ["a", "b"]);
        assert_eq!(ids(dedup(vec![scored("c"), scored("b")])), ["c", "b"]);
    }

    #[test]
    fn wire_format_is_flat() {
        let mut c = scored("a");
        c.bm25 = 1.5;
        let v = serde_json::to_value(&c).unwrap();
        for key in ["id", "source_id", "uri", "heading_path", "body", "token_count", "bm25", "cosine", "fused"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        assert!(v.get("rerank").is_none());
        let back: ScoredChunk = serde_json::from_value(v).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn hybrid_finds_exact_match() {
        let s = shard(&["the cat sat", "dogs bark loudly", "zebra stripes"]);
        let hits = hybrid_search("zebra", &s, &HashingEmbedder::default(), 1, &SearchOptions::default()).unwrap();
        assert_eq!(hits[0].chunk.body, "zebra stripes");
        assert!(hybrid_search("x", &s, &HashingEmbedder::default(), 0, &SearchOptions::default()).is_err());
    }

    fn ids_strategy() -> impl Strategy<Value = Vec<String>> {
        prop::collection::vec("[a-f]", 0..20)
    }

    proptest! {
        #[test]
        fn dedup_idempotent_and_ordered(ids in ids_strategy()) {
            let list: Vec<ScoredChunk> = ids.iter().map(|i| scored(i)).collect();
            let once = dedup(list.clone());
            prop_assert_eq!(dedup(once.clone()), once.clone());
            let mut it = list.iter();
            for c in &once {
                prop_assert!(it.any(|x| x.id() == c.id()));
            }
        }

        #[test]
        fn bm25_monotone_in_tf(tf in 1u32..50, extra in 1u32..50, len in 1u32..200, df in 1u32..20, n in 20usize..40) {
            let stats = CorpusStats {
                doc_count: n,
                avg_doc_len: 30.0,
                doc_freq: [("t".to_string(), df)].into_iter().collect(),
            };
            let q = vec!["t".to_string()];
            let lo = bm25_score(&q, &SparseVector::new(vec!["t".into()], vec![tf]).unwrap(), len, &stats, Bm25Params::default());
            let hi = bm25_score(&q, &SparseVector::new(vec!["t".into()], vec![tf + extra]).unwrap(), len, &stats, Bm25Params::default());
            prop_assert!(hi >= lo);
            prop_assert!(lo >= 0.0);
        }

        #[test]
        fn rrf_ignores_score_scale(ids in ids_strategy(), scale in 0.1f64..100.0) {
            let ranking: Vec<ScoredChunk> = ids.iter().enumerate().map(|(i, id)| ScoredChunk { bm25: 100.0 - i as f64, ..scored(id) }).collect();
            let rescaled: Vec<ScoredChunk> = ranking.iter().map(|c| ScoredChunk { bm25: c.bm25 * scale, ..c.clone() }).collect();
            let a: Vec<(String, f64)> = fuse_rrf(&[ranking], 60).into_iter().map(|c| (c.chunk.id, c.fused)).collect();
            let b: Vec<(String, f64)> = fuse_rrf(&[rescaled], 60).into_iter().map(|c| (c.chunk.id, c.fused)).collect();
            prop_assert_eq!(a, b);
        }
    }
}
