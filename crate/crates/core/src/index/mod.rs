//! Immutable per-source hybrid index: sparse term statistics for BM25 plus
//! L2-normalized dense vectors.

mod parquet;

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{BackendError, Embedder};
use crate::chunker::Chunk;
use crate::tokenize::{lowercase_tokens, truncate_to_tokens};

pub use self::parquet::{load_shard, save_shard, FORMAT_VERSION, SHARD_EXTENSION};

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("cannot build an index from zero chunks")]
    Empty,
    #[error("embedding chunk {chunk_id} failed: {source}")]
    Embed {
        chunk_id: String,
        #[source]
        source: BackendError,
    },
    #[error("chunk {chunk_id}: embedding has dimension {got}, expected {expected}")]
    Dimension {
        chunk_id: String,
        expected: usize,
        got: usize,
    },
    #[error("cannot read shard {path}: {message}")]
    Unreadable { path: PathBuf, message: String },
    #[error("cannot write shard {path}: {message}")]
    Write { path: PathBuf, message: String },
    #[error("shard {path} does not match the expected schema: {message}")]
    Schema { path: PathBuf, message: String },
    #[error("shard {path}: stored statistics disagree with the data: {message}")]
    StatsMismatch { path: PathBuf, message: String },
}

/// Term frequencies of one chunk, terms strictly ascending.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SparseVector {
    terms: Vec<String>,
    tfs: Vec<u32>,
}

impl SparseVector {
    pub fn new(terms: Vec<String>, tfs: Vec<u32>) -> Result<Self, String> {
        if terms.len() != tfs.len() {
            return Err(format!("{} terms but {} frequencies", terms.len(), tfs.len()));
        }
        if let Some(w) = terms.windows(2).find(|w| w[0] >= w[1]) {
            return Err(format!("terms not strictly ascending at `{}`", w[1]));
        }
        if tfs.contains(&0) {
            return Err("term frequency of zero".into());
        }
        Ok(SparseVector { terms, tfs })
    }

    /// Lowercased token counts of `text`.
    pub fn from_text(text: &str) -> Self {
        let mut counts: BTreeMap<String, u32> = BTreeMap::new();
        for t in lowercase_tokens(text) {
            *counts.entry(t).or_default() += 1;
        }
        let (terms, tfs) = counts.into_iter().unzip();
        SparseVector { terms, tfs }
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub fn tfs(&self) -> &[u32] {
        &self.tfs
    }

    pub fn tf(&self, term: &str) -> u32 {
        self.terms
            .binary_search_by(|t| t.as_str().cmp(term))
            .map_or(0, |i| self.tfs[i])
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DenseVector(pub Vec<f32>);

impl DenseVector {
    pub fn zeros(dimension: usize) -> Self {
        DenseVector(vec![0.0; dimension])
    }

    pub fn dimension(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>().sqrt()
    }

    /// Scales to unit L2 norm; the zero vector stays zero.
    pub fn normalized(&self) -> Self {
        let norm = self.norm();
        if norm == 0.0 {
            return self.clone();
        }
        DenseVector(self.0.iter().map(|&v| (f64::from(v) / norm) as f32).collect())
    }

    pub fn dot(&self, other: &DenseVector) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(&a, &b)| f64::from(a) * f64::from(b))
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexedChunk {
    pub chunk: Chunk,
    pub sparse: SparseVector,
    pub dense: DenseVector,
}

/// BM25 corpus statistics of one shard.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusStats {
    pub doc_count: usize,
    pub avg_doc_len: f64,
    pub doc_freq: BTreeMap<String, u32>,
}

impl CorpusStats {
    pub fn compute<'a>(entries: impl IntoIterator<Item = (&'a SparseVector, u32)>) -> Self {
        let mut doc_count = 0usize;
        let mut total_len = 0u64;
        let mut doc_freq: BTreeMap<String, u32> = BTreeMap::new();
        for (sparse, token_count) in entries {
            doc_count += 1;
            total_len += u64::from(token_count);
            for term in sparse.terms() {
                *doc_freq.entry(term.clone()).or_default() += 1;
            }
        }
        let avg_doc_len = if doc_count == 0 {
            0.0
        } else {
            total_len as f64 / doc_count as f64
        };
        CorpusStats {
            doc_count,
            avg_doc_len,
            doc_freq,
        }
    }

    pub fn df(&self, term: &str) -> u32 {
        self.doc_freq.get(term).copied().unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexShard {
    pub shard_id: String,
    pub embedder_tag: String,
    pub dimension: usize,
    pub chunks: Vec<IndexedChunk>,
    pub stats: CorpusStats,
}

impl IndexShard {
    /// Assembles a shard from already indexed chunks, computing statistics.
    pub fn from_parts(
        shard_id: impl Into<String>,
        embedder_tag: impl Into<String>,
        dimension: usize,
        chunks: Vec<IndexedChunk>,
    ) -> Self {
        let stats = CorpusStats::compute(chunks.iter().map(|c| (&c.sparse, c.chunk.token_count)));
        IndexShard {
            shard_id: shard_id.into(),
            embedder_tag: embedder_tag.into(),
            dimension,
            chunks,
            stats,
        }
    }

    pub fn len(&self) -> usize {
        self.chunks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }
}

/// Indexes chunks of one shard with the given embedder.
pub fn build_index(
    shard_id: &str,
    chunks: Vec<Chunk>,
    embedder: &dyn Embedder,
) -> Result<IndexShard, IndexError> {
    if chunks.is_empty() {
        return Err(IndexError::Empty);
    }
    let spec = embedder.spec();
    let mut indexed = Vec::with_capacity(chunks.len());
    for chunk in chunks {
        let text = truncate_to_tokens(&chunk.body, spec.max_input_tokens);
        if text.len() < chunk.body.len() {
            tracing::warn!(chunk_id = %chunk.id, limit = spec.max_input_tokens, "chunk truncated for embedding");
        }
        let dense = embedder.embed(text).map_err(|source| IndexError::Embed {
            chunk_id: chunk.id.clone(),
            source,
        })?;
        if dense.dimension() != spec.dimension {
            return Err(IndexError::Dimension {
                chunk_id: chunk.id,
                expected: spec.dimension,
                got: dense.dimension(),
            });
        }
        indexed.push(IndexedChunk {
            sparse: SparseVector::from_text(&chunk.body),
            dense: dense.normalized(),
            chunk,
        });
    }
    Ok(IndexShard::from_parts(shard_id, spec.tag.clone(), spec.dimension, indexed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::{EmbedderSpec, HashingEmbedder};
    use crate::chunker::make_chunk_id;
    use chrono::{TimeZone, Utc};
    use std::collections::BTreeSet;

    pub(crate) fn chunk(body: &str) -> Chunk {
        Chunk {
            id: make_chunk_id("s", &[], body),
            source_id: "s".into(),
            uri: "mem://s".into(),
            heading_path: vec![],
            body: body.into(),
            token_count: crate::count_tokens(body) as u32,
            created_at: Utc.timestamp_millis_opt(0).unwrap(),
        }
    }

    #[test]
    fn sparse_counts() {
        let shard = build_index("s", vec![chunk("Hello hello world")], &HashingEmbedder::default()).unwrap();
        let sparse = &shard.chunks[0].sparse;
        assert_eq!(sparse.terms(), ["hello", "world"]);
        assert_eq!(sparse.tfs(), [2, 1]);
        assert_eq!(shard.stats.doc_count, 1);
        assert_eq!(shard.stats.avg_doc_len, 3.0);
    }

    #[test]
    fn shared_term_doc_freq() {
        let shard = build_index("s", vec![chunk("a b"), chunk("a c")], &HashingEmbedder::default()).unwrap();
        assert_eq!(shard.stats.df("a"), 2);
        assert_eq!(shard.stats.df("b"), 1);
        assert_eq!(shard.stats.df("zzz"), 0);
    }

    #[test]
    fn empty_input_rejected() {
        assert!(matches!(
            build_index("s", vec![], &HashingEmbedder::default()),
            Err(IndexError::Empty)
        ));
    }

    #[test]
    fn doc_freq_matches_brute_force_recount() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let vocab = ["alpha", "Beta", "gamma", "delta", "eps", "zeta", "eta", "theta", ",", "."];
        let chunks: Vec<Chunk> = (0..100)
            .map(|i| {
                let n = rng.random_range(0..15);
                let words: Vec<&str> = (0..n).map(|_| vocab[rng.random_range(0..vocab.len())]).collect();
                chunk(&format!("doc{i} {}", words.join(" ")))
            })
            .collect();
        let shard = build_index("s", chunks.clone(), &HashingEmbedder::default()).unwrap();

        let mut expected: BTreeMap<String, u32> = BTreeMap::new();
        let mut total = 0u64;
        for c in &chunks {
            let set: BTreeSet<String> = c
                .body
                .split_whitespace()
                .map(|w| w.to_lowercase())
                .collect();
            for t in set {
                *expected.entry(t).or_default() += 1;
            }
            total += c.body.split_whitespace().count() as u64;
        }
        assert_eq!(shard.stats.doc_freq, expected);
        assert!((shard.stats.avg_doc_len - total as f64 / 100.0).abs() < 1e-6);
        assert!(shard.stats.doc_freq.values().all(|&df| df as usize <= shard.len()));
    }

    #[test]
    fn dense_vectors_are_unit_or_zero() {
        let shard = build_index("s", vec![chunk("some words"), chunk("")], &HashingEmbedder::default()).unwrap();
        assert!((shard.chunks[0].dense.norm() - 1.0).abs() < 1e-3);
        assert_eq!(shard.chunks[1].dense.norm(), 0.0);
        assert_eq!(shard.dimension, HashingEmbedder::default().spec().dimension);
    }

    #[test]
    fn embedder_failure_names_chunk() {
        struct Broken(EmbedderSpec);
        impl Embedder for Broken {
            fn spec(&self) -> &EmbedderSpec {
                &self.0
            }
            fn embed(&self, _: &str) -> Result<DenseVector, BackendError> {
                Err(BackendError::Transport("down".into()))
            }
        }
        let c = chunk("x");
        let err = build_index("s", vec![c.clone()], &Broken(EmbedderSpec::new("broken", 4, 16))).unwrap_err();
        assert!(matches!(err, IndexError::Embed { chunk_id, .. } if chunk_id == c.id));
    }

    #[test]
    fn sparse_vector_validation() {
        assert!(SparseVector::new(vec!["a".into(), "b".into()], vec![1, 2]).is_ok());
        assert!(SparseVector::new(vec!["b".into(), "a".into()], vec![1, 2]).is_err());
        assert!(SparseVector::new(vec!["a".into()], vec![0]).is_err());
        assert!(SparseVector::new(vec!["a".into()], vec![]).is_err());
    }
}
