//! Core of a local retrieval-augmented ChatOps stack.
//!
//! Documents are converted to normalized Markdown, split by heading into
//! typed blocks and cut into token-bounded chunks. Chunks are indexed per
//! source with BM25 statistics and dense vectors and persisted as Parquet.
//! At question time sources are searched with both rankings fused by RRF,
//! candidates are reranked in token-budgeted batches, tools are called over
//! MCP, and the answer prompt is assembled under a hard token budget.

pub mod backends;
pub mod chunker;
pub mod eval;
pub mod index;
pub mod ingest;
pub mod mcp;
pub mod pipeline;
pub mod prompt;
pub mod rerank;
pub mod retrieval;
pub mod tokenize;

pub use chunker::{chunk_document, chunk_section, make_chunk_id, Chunk, ChunkLimit};
pub use tokenize::count_tokens;
