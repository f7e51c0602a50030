//! RAG sources and the concurrent fan-out over them.

use std::sync::Arc;
use std::thread;

use thiserror::Error;

use crate::backends::Embedder;
use crate::index::IndexShard;
use crate::retrieval::{dedup, hybrid_search, sort_by_fused, RetrievalError, ScoredChunk, SearchOptions};

#[derive(Debug, Error)]
pub enum SourceError {
    #[error("source {source_name} is unreachable: {message}")]
    Unreachable { source_name: String, message: String },
    #[error("source {source_name} answered with an error: {message}")]
    Failed { source_name: String, message: String },
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error("shard {shard} was embedded with `{shard_tag}` but the embedder is `{embedder_tag}`")]
    EmbedderMismatch {
        shard: String,
        shard_tag: String,
        embedder_tag: String,
    },
}

/// Anything that answers hybrid search requests for one shard.
pub trait SearchSource: Send + Sync {
    fn name(&self) -> &str;
    fn search(&self, query: &str, top_k: usize) -> Result<Vec<ScoredChunk>, SourceError>;
}

/// A shard searched in-process.
pub struct LocalSource {
    shard: Arc<IndexShard>,
    embedder: Arc<dyn Embedder>,
    options: SearchOptions,
}

impl LocalSource {
    pub fn new(shard: Arc<IndexShard>, embedder: Arc<dyn Embedder>, options: SearchOptions) -> Result<Self, SourceError> {
        let spec = embedder.spec();
        if spec.tag != shard.embedder_tag || spec.dimension != shard.dimension {
            return Err(SourceError::EmbedderMismatch {
                shard: shard.shard_id.clone(),
                shard_tag: shard.embedder_tag.clone(),
                embedder_tag: spec.tag.clone(),
            });
        }
        Ok(LocalSource {
            shard,
            embedder,
            options,
        })
    }

    pub fn shard(&self) -> &IndexShard {
        &self.shard
    }
}

impl SearchSource for LocalSource {
    fn name(&self) -> &str {
        &self.shard.shard_id
    }

    fn search(&self, query: &str, top_k: usize) -> Result<Vec<ScoredChunk>, SourceError> {
        Ok(hybrid_search(query, &self.shard, self.embedder.as_ref(), top_k, &self.options)?)
    }
}

#[derive(Debug, Default)]
pub struct FanOut {
    pub chunks: Vec<ScoredChunk>,
    /// One message per failed source.
    pub warnings: Vec<String>,
    pub failed_sources: usize,
}

/// Queries every source concurrently for `depth` results, merges by fused
/// score, removes duplicate ids and keeps the best `depth`.
pub fn fan_out_search(query: &str, sources: &[Arc<dyn SearchSource>], depth: usize) -> FanOut {
    let results: Vec<Result<Vec<ScoredChunk>, SourceError>> = if sources.len() == 1 {
        vec![sources[0].search(query, depth)]
    } else {
        thread::scope(|s| {
            let handles: Vec<_> = sources
                .iter()
                .map(|src| s.spawn(move || src.search(query, depth)))
                .collect();
            handles
                .into_iter()
                .zip(sources)
                .map(|(h, src)| {
                    h.join().unwrap_or_else(|_| {
                        Err(SourceError::Failed {
                            source_name: src.name().to_string(),
                            message: "search panicked".into(),
                        })
                    })
                })
                .collect()
        })
    };
    let mut out = FanOut::default();
    for r in results {
        match r {
            Ok(chunks) => out.chunks.extend(chunks),
            Err(e) => {
                out.failed_sources += 1;
                out.warnings.push(e.to_string());
            }
        }
    }
    sort_by_fused(&mut out.chunks);
    out.chunks = dedup(std::mem::take(&mut out.chunks));
    out.chunks.truncate(depth);
    out
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::chunker::Chunk;
    use chrono::DateTime;

    pub(crate) struct Fixed {
        pub name: String,
        pub chunks: Vec<ScoredChunk>,
        pub down: bool,
    }

    impl SearchSource for Fixed {
        fn name(&self) -> &str {
            &self.name
        }
        fn search(&self, _: &str, top_k: usize) -> Result<Vec<ScoredChunk>, SourceError> {
            if self.down {
                return Err(SourceError::Unreachable {
                    source_name: self.name.clone(),
                    message: "connection refused".into(),
                });
            }
            Ok(self.chunks.iter().take(top_k).cloned().collect())
        }
    }

    fn sc(id: &str, fused: f64) -> ScoredChunk {
        ScoredChunk {
            fused,
            ..ScoredChunk::new(Chunk {
                id: id.into(),
                source_id: "s".into(),
                uri: "mem://".into(),
                heading_path: vec![],
                body: id.into(),
                token_count: 1,
                created_at: DateTime::from_timestamp_millis(0).unwrap(),
            })
        }
    }

    fn src(name: &str, items: &[(&str, f64)], down: bool) -> Arc<dyn SearchSource> {
        Arc::new(Fixed {
            name: name.into(),
            chunks: items.iter().map(|&(i, f)| sc(i, f)).collect(),
            down,
        })
    }

    #[test]
    fn disjoint_sources_merge_by_fused() {
        let out = fan_out_search(
            "q",
            &[src("a", &[("a1", 0.03), ("a2", 0.01)], false), src("b", &[("b1", 0.02)], false)],
            10,
        );
        let ids: Vec<&str> = out.chunks.iter().map(|c| c.id()).collect();
        assert_eq!(ids, ["a1", "b1", "a2"]);
        assert!(out.warnings.is_empty());
    }

    #[test]
    fn one_source_down_warns() {
        let out = fan_out_search("q", &[src("a", &[("a1", 0.03)], false), src("b", &[], true)], 10);
        assert_eq!(out.chunks.len(), 1);
        assert_eq!(out.failed_sources, 1);
        assert!(out.warnings[0].contains("connection refused"));
    }

    #[test]
    fn duplicate_ids_appear_once() {
        let out = fan_out_search("q", &[src("a", &[("x", 0.03), ("x", 0.02)], false)], 10);
        assert_eq!(out.chunks.len(), 1);
        assert_eq!(out.chunks[0].fused, 0.03);
    }

    #[test]
    fn merged_list_is_cut_to_depth() {
        let out = fan_out_search("q", &[src("a", &[("a", 0.3), ("b", 0.2), ("c", 0.1)], false)], 2);
        assert_eq!(out.chunks.len(), 2);
    }
}
