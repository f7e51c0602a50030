//! HTTP services around `ragx-core`.
//!
//! * [`source_api`]: a RAG source serving hybrid search over one shard.
//! * [`chat_api`]: the chat backend streaming pipeline events over SSE.
//! * [`mcp_http`]: MCP over HTTP, client transport and stub tool server.
//! * [`model_http`]: clients for OpenAI-compatible model servers.

pub mod assemble;
pub mod chat_api;
pub mod client;
pub mod http_source;
pub mod mcp_http;
pub mod model_http;
pub mod server;
pub mod source_api;
pub mod sse;

pub use assemble::{build_embedder, build_generator, build_pipeline, build_scorer, BuildError};
pub use chat_api::{chat_router, BackendHealth};
pub use client::{ChatClient, ClientError};
pub use http_source::HttpSource;
pub use server::{serve_blocking, spawn_server, ServerHandle};
pub use source_api::{source_router, SearchRequest, SearchResponse, SourceHealth};
