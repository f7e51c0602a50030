#![allow(dead_code)]

use std::sync::Arc;

use chrono::DateTime;
use ragx_core::backends::HashingEmbedder;
use ragx_core::chunker::{make_chunk_id, Chunk};
use ragx_core::count_tokens;
use ragx_core::index::{build_index, IndexShard};
use ragx_core::pipeline::LocalSource;
use ragx_core::retrieval::SearchOptions;

pub const DOCS: [&str; 3] = [
    "# Paris\n\nParis is the capital of France.",
    "# Berlin\n\nBerlin is the capital of Germany.",
    "# Disks\n\nRotate logs when the disk on a web node fills up.",
];

pub fn shard_of(source_id: &str, bodies: &[&str]) -> IndexShard {
    let chunks = bodies
        .iter()
        .map(|b| Chunk {
            id: make_chunk_id(source_id, &[], b),
            source_id: source_id.into(),
            uri: format!("file://{source_id}.md"),
            heading_path: vec![],
            body: b.to_string(),
            token_count: count_tokens(b) as u32,
            created_at: DateTime::from_timestamp_millis(0).unwrap(),
        })
        .collect();
    build_index(source_id, chunks, &HashingEmbedder::default()).unwrap()
}

pub fn local_source(source_id: &str, bodies: &[&str]) -> Arc<LocalSource> {
    Arc::new(
        LocalSource::new(
            Arc::new(shard_of(source_id, bodies)),
            Arc::new(HashingEmbedder::default()),
            SearchOptions::default(),
        )
        .unwrap(),
    )
}

/// An address nothing listens on.
pub fn dead_url() -> String {
    let l = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = l.local_addr().unwrap();
    drop(l);
    format!("http://{addr}")
}
