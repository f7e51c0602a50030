//! Token-bounded chunks that carry their heading context.
//!
//! Every chunk body starts with the rendered heading path, one line per
//! heading, followed by a blank line and a slice of exactly one block. Blocks
//! that do not fit are split on natural boundaries (sentences, rows, items,
//! lines) and, failing that, on word boundaries. Table slices repeat the
//! table's header rows.

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::ingest::{parse_sections, BlockKind, Heading, MarkdownDoc, Section};
use crate::tokenize::{count_tokens, token_spans};

pub const DEFAULT_CHUNK_TOKENS: usize = 350;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chunk {
    pub id: String,
    pub source_id: String,
    pub uri: String,
    pub heading_path: Vec<String>,
    pub body: String,
    pub token_count: u32,
    pub created_at: DateTime<Utc>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkLimit {
    pub max_tokens: usize,
}

impl Default for ChunkLimit {
    fn default() -> Self {
        ChunkLimit {
            max_tokens: DEFAULT_CHUNK_TOKENS,
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ChunkError {
    #[error(
        "block {block_index} ({kind:?}) under `{heading}`: {needed} tokens needed but the limit is {limit}"
    )]
    LimitTooSmall {
        heading: String,
        block_index: usize,
        kind: BlockKind,
        needed: usize,
        limit: usize,
    },
    #[error("chunk limit must be positive")]
    ZeroLimit,
}

/// Source of chunk creation timestamps.
pub trait Clock: Send + Sync {
    fn now(&self) -> DateTime<Utc>;
}

pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> DateTime<Utc> {
        Utc::now()
    }
}

pub struct FixedClock(pub DateTime<Utc>);

impl Clock for FixedClock {
    fn now(&self) -> DateTime<Utc> {
        self.0
    }
}

/// Timestamps are stored with millisecond precision.
pub fn truncate_to_millis(t: DateTime<Utc>) -> DateTime<Utc> {
    DateTime::from_timestamp_millis(t.timestamp_millis()).unwrap_or(t)
}

pub struct Provenance<'a> {
    pub source_id: &'a str,
    pub uri: &'a str,
    pub clock: &'a dyn Clock,
}

/// SHA-256 over `source_id 0x1F join(heading_path, 0x1F) 0x1F body`,
/// lowercase hex.
pub fn make_chunk_id(source_id: &str, heading_path: &[String], body: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(source_id.as_bytes());
    hasher.update([0x1F]);
    for (i, h) in heading_path.iter().enumerate() {
        if i > 0 {
            hasher.update([0x1F]);
        }
        hasher.update(h.as_bytes());
    }
    hasher.update([0x1F]);
    hasher.update(body.as_bytes());
    hex::encode(hasher.finalize())
}

/// `#`×level + title, one line per heading.
pub fn render_heading_prefix(path: &[Heading]) -> String {
    path.iter()
        .map(|h| {
            let marks = "#".repeat(h.level as usize);
            if h.title.is_empty() {
                marks
            } else {
                format!("{marks} {}", h.title)
            }
        })
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn compose_body(prefix: &str, content: &str) -> String {
    if prefix.is_empty() {
        content.to_string()
    } else {
        format!("{prefix}\n\n{content}")
    }
}

/// One chunk's worth of content before provenance is attached.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChunkPiece {
    pub block_index: usize,
    pub kind: BlockKind,
    /// Content without the heading prefix. Table continuations start with
    /// the repeated header rows.
    pub content: String,
    /// True for every table piece after the first.
    pub repeats_header: bool,
}

type Span = (usize, usize);

fn sentence_spans(text: &str) -> Vec<Span> {
    let bytes: Vec<(usize, char)> = text.char_indices().collect();
    let mut spans = Vec::new();
    let mut start: Option<usize> = None;
    for (k, &(i, c)) in bytes.iter().enumerate() {
        if start.is_none() {
            if c.is_whitespace() {
                continue;
            }
            start = Some(i);
        }
        if matches!(c, '.' | '!' | '?') {
            let next = bytes.get(k + 1).map(|&(_, c)| c);
            let after = bytes.get(k + 2).map(|&(_, c)| c);
            let boundary = match next {
                None | Some('\n') => true,
                Some(' ') => after.is_some_and(char::is_uppercase),
                _ => false,
            };
            if boundary {
                spans.push((start.take().unwrap(), i + c.len_utf8()));
            }
        }
    }
    if let Some(s) = start {
        let end = text.trim_end().len();
        if end > s {
            spans.push((s, end));
        }
    }
    spans
}

fn line_spans(text: &str, from: usize) -> Vec<Span> {
    let mut spans = Vec::new();
    let mut pos = 0;
    for line in text.split('\n') {
        let end = pos + line.len();
        if pos >= from {
            spans.push((pos, end));
        }
        pos = end + 1;
    }
    spans
}

fn list_item_spans(text: &str) -> Vec<Span> {
    let mut spans: Vec<Span> = Vec::new();
    for (s, e) in line_spans(text, 0) {
        let line = &text[s..e];
        match spans.last_mut() {
            Some(last) if !crate::ingest::is_list_item(line) => last.1 = e,
            _ => spans.push((s, e)),
        }
    }
    spans
}

fn word_spans(text: &str, unit: Span) -> Vec<Span> {
    let slice = &text[unit.0..unit.1];
    let mut spans = Vec::new();
    let mut start = None;
    for (i, c) in slice.char_indices() {
        match (c.is_whitespace(), start) {
            (false, None) => start = Some(i),
            (true, Some(s)) => {
                spans.push((unit.0 + s, unit.0 + i));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        spans.push((unit.0 + s, unit.1));
    }
    spans
}

struct BlockCtx<'a> {
    heading: &'a str,
    block_index: usize,
    kind: BlockKind,
    limit: usize,
}

impl BlockCtx<'_> {
    fn too_small(&self, needed: usize) -> ChunkError {
        ChunkError::LimitTooSmall {
            heading: self.heading.to_string(),
            block_index: self.block_index,
            kind: self.kind,
            needed,
            limit: self.limit,
        }
    }
}

/// Greedily packs whitespace-separated units into spans of at most `budget`
/// tokens. Oversized units fall back to word units; an oversized word is an
/// error carrying `overhead + word tokens` as the requirement.
fn pack(
    text: &str,
    units: &[Span],
    budget: usize,
    overhead: usize,
    ctx: &BlockCtx<'_>,
) -> Result<Vec<Span>, ChunkError> {
    let mut out = Vec::new();
    let mut current: Option<(Span, usize)> = None;
    for &unit in units {
        let tokens = count_tokens(&text[unit.0..unit.1]);
        if tokens > budget {
            if let Some((span, _)) = current.take() {
                out.push(span);
            }
            let words = word_spans(text, unit);
            for &w in &words {
                let n = count_tokens(&text[w.0..w.1]);
                if n > budget {
                    return Err(ctx.too_small(overhead + n));
                }
            }
            out.extend(pack(text, &words, budget, overhead, ctx)?);
            continue;
        }
        current = match current {
            Some((span, used)) if used + tokens <= budget => Some(((span.0, unit.1), used + tokens)),
            Some((span, _)) => {
                out.push(span);
                Some((unit, tokens))
            }
            None => Some((unit, tokens)),
        };
    }
    if let Some((span, _)) = current {
        out.push(span);
    }
    Ok(out)
}

/// Splits a section's blocks into pieces whose bodies (with heading prefix)
/// stay within `limit`.
pub fn split_section(section: &Section, limit: ChunkLimit) -> Result<Vec<ChunkPiece>, ChunkError> {
    if limit.max_tokens == 0 {
        return Err(ChunkError::ZeroLimit);
    }
    let prefix = render_heading_prefix(&section.heading_path);
    let prefix_tokens = count_tokens(&prefix);
    let heading = prefix.replace('\n', " / ");
    let mut pieces = Vec::new();

    for (block_index, block) in section.blocks.iter().enumerate() {
        let ctx = BlockCtx {
            heading: &heading,
            block_index,
            kind: block.kind,
            limit: limit.max_tokens,
        };
        let text = block.text.as_str();
        let block_tokens = count_tokens(text);
        let piece = |content: String, repeats_header: bool| ChunkPiece {
            block_index,
            kind: block.kind,
            content,
            repeats_header,
        };
        if prefix_tokens >= limit.max_tokens {
            return Err(ctx.too_small(prefix_tokens + block_tokens.max(1)));
        }
        let budget = limit.max_tokens - prefix_tokens;
        if block_tokens <= budget {
            pieces.push(piece(text.to_string(), false));
            continue;
        }
        match block.kind {
            BlockKind::Table => {
                let header = block.table_header.as_deref().unwrap_or("");
                let header_tokens = count_tokens(header);
                let rows = line_spans(text, header.len() + 1);
                if header_tokens >= budget {
                    let smallest = rows
                        .iter()
                        .map(|r| count_tokens(&text[r.0..r.1]))
                        .min()
                        .unwrap_or(0);
                    return Err(ctx.too_small(prefix_tokens + header_tokens + smallest.max(1)));
                }
                let spans = pack(text, &rows, budget - header_tokens, prefix_tokens + header_tokens, &ctx)?;
                for (k, (s, e)) in spans.into_iter().enumerate() {
                    pieces.push(piece(format!("{header}\n{}", &text[s..e]), k > 0));
                }
            }
            kind => {
                let units = match kind {
                    BlockKind::Paragraph => sentence_spans(text),
                    BlockKind::List => list_item_spans(text),
                    _ => line_spans(text, 0),
                };
                for (s, e) in pack(text, &units, budget, prefix_tokens, &ctx)? {
                    pieces.push(piece(text[s..e].to_string(), false));
                }
            }
        }
    }
    Ok(pieces)
}

/// Chunks one section. Pure apart from the injected clock.
pub fn chunk_section(
    section: &Section,
    limit: ChunkLimit,
    provenance: &Provenance<'_>,
) -> Result<Vec<Chunk>, ChunkError> {
    let prefix = render_heading_prefix(&section.heading_path);
    let heading_path: Vec<String> = section.heading_path.iter().map(|h| h.title.clone()).collect();
    let pieces = split_section(section, limit)?;
    let created_at = truncate_to_millis(provenance.clock.now());
    Ok(pieces
        .into_iter()
        .map(|p| {
            let body = compose_body(&prefix, &p.content);
            let token_count = count_tokens(&body);
            debug_assert!(token_count <= limit.max_tokens);
            Chunk {
                id: make_chunk_id(provenance.source_id, &heading_path, &body),
                source_id: provenance.source_id.to_string(),
                uri: provenance.uri.to_string(),
                heading_path: heading_path.clone(),
                body,
                token_count: token_count as u32,
                created_at,
            }
        })
        .collect())
}

/// Parses and chunks a whole document.
pub fn chunk_document(
    doc: &MarkdownDoc,
    limit: ChunkLimit,
    clock: &dyn Clock,
) -> Result<Vec<Chunk>, ChunkError> {
    let provenance = Provenance {
        source_id: &doc.source_id,
        uri: &doc.uri,
        clock,
    };
    let mut chunks = Vec::new();
    for section in parse_sections(doc) {
        chunks.extend(chunk_section(&section, limit, &provenance)?);
    }
    Ok(chunks)
}

/// Token sequence of a text, used to check coverage.
pub fn token_sequence(text: &str) -> Vec<&str> {
    token_spans(text).map(|(s, e)| &text[s..e]).collect()
}
