//! Deterministic backends: hashed bag-of-words embeddings, Jaccard overlap
//! scoring and a template generator that echoes its first context entry.

use std::collections::BTreeSet;

use super::{
    BackendError, Completion, Embedder, EmbedderSpec, FinishReason, GenerationParams, Generator,
    GeneratorSpec, PairScorer, ScorerSpec,
};
use crate::index::DenseVector;
use crate::prompt::{CONTEXT_HEADING, CONVERSATION_HEADING, TOOLS_HEADING};
use crate::tokenize::{count_tokens, lowercase_tokens, token_spans, truncate_to_tokens};

pub const HASH_EMBEDDER_TAG: &str = "hash-bow-64";
pub const HASH_EMBEDDER_DIMENSION: usize = 64;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

/// Each lowercased token adds ±1 to bucket `h % D`, where `h` is its FNV-1a
/// hash and the sign is negative when bit 63 of `h` is set.
#[derive(Debug, Clone)]
pub struct HashingEmbedder {
    spec: EmbedderSpec,
}

impl HashingEmbedder {
    pub fn new(dimension: usize) -> Self {
        assert!(dimension > 0, "embedding dimension must be positive");
        HashingEmbedder {
            spec: EmbedderSpec::new(
                if dimension == HASH_EMBEDDER_DIMENSION {
                    HASH_EMBEDDER_TAG.to_string()
                } else {
                    format!("hash-bow-{dimension}")
                },
                dimension,
                8192,
            ),
        }
    }
}

impl Default for HashingEmbedder {
    fn default() -> Self {
        HashingEmbedder::new(HASH_EMBEDDER_DIMENSION)
    }
}

impl Embedder for HashingEmbedder {
    fn spec(&self) -> &EmbedderSpec {
        &self.spec
    }

    fn embed(&self, text: &str) -> Result<DenseVector, BackendError> {
        let dim = self.spec.dimension;
        let mut v = vec![0.0f32; dim];
        for token in lowercase_tokens(text) {
            let h = fnv1a64(token.as_bytes());
            let bucket = (h % dim as u64) as usize;
            v[bucket] += if h >> 63 == 1 { -1.0 } else { 1.0 };
        }
        Ok(DenseVector(v).normalized())
    }
}

/// Jaccard similarity of the lowercased token sets.
#[derive(Debug, Clone)]
pub struct LexicalOverlapScorer {
    spec: ScorerSpec,
}

impl LexicalOverlapScorer {
    pub fn new(context_tokens: usize) -> Self {
        LexicalOverlapScorer {
            spec: ScorerSpec {
                tag: "lexical-overlap".into(),
                context_tokens,
                max_in_flight: None,
            },
        }
    }
}

impl Default for LexicalOverlapScorer {
    fn default() -> Self {
        LexicalOverlapScorer::new(8192)
    }
}

impl PairScorer for LexicalOverlapScorer {
    fn spec(&self) -> &ScorerSpec {
        &self.spec
    }

    fn score_pair(&self, query: &str, passage: &str) -> Result<f64, BackendError> {
        let q: BTreeSet<String> = lowercase_tokens(query).collect();
        let p: BTreeSet<String> = lowercase_tokens(passage).collect();
        let union = q.union(&p).count();
        if union == 0 {
            return Ok(0.0);
        }
        Ok(q.intersection(&p).count() as f64 / union as f64)
    }
}

/// Literal that makes [`TemplateEchoGenerator`] request the `create_issue`
/// tool when the prompt offers tools.
pub const TOOL_TRIGGER: &str = "TOOL:create_issue";
pub const NO_CONTEXT_ANSWER: &str = "I found no relevant context.";
const ANSWER_LEAD: &str = "Answer based on [1]: ";
const EXCERPT_TOKENS: usize = 20;

#[derive(Debug, Clone)]
pub struct TemplateEchoGenerator {
    spec: GeneratorSpec,
}

impl TemplateEchoGenerator {
    pub fn new(context_tokens: usize) -> Self {
        TemplateEchoGenerator {
            spec: GeneratorSpec {
                tag: "template-echo".into(),
                context_tokens,
                supports_streaming: true,
                max_in_flight: None,
            },
        }
    }

    /// The full completion for `prompt`, before any `max_tokens` cut.
    pub fn completion_for(prompt: &str) -> String {
        let lines: Vec<&str> = prompt.lines().collect();
        let mut out = String::new();
        if lines.contains(&TOOLS_HEADING) && prompt.contains(TOOL_TRIGGER) {
            let title = last_user_line(&lines)
                .map(|l| l.replace(TOOL_TRIGGER, " ").split_whitespace().collect::<Vec<_>>().join(" "))
                .map(|l| truncate_to_tokens(&l, 12).to_string())
                .filter(|t| !t.is_empty())
                .unwrap_or_else(|| "ChatOps request".to_string());
            let call = serde_json::json!({
                "tool": "create_issue",
                "arguments": { "title": title },
            });
            out.push_str("```tool_call\n");
            out.push_str(&call.to_string());
            out.push_str("\n```\n");
        }
        match first_context_entry(&lines) {
            Some(entry) => {
                out.push_str(ANSWER_LEAD);
                out.push_str(truncate_to_tokens(entry.trim_start(), EXCERPT_TOKENS));
            }
            None => out.push_str(NO_CONTEXT_ANSWER),
        }
        out
    }
}

impl Default for TemplateEchoGenerator {
    fn default() -> Self {
        TemplateEchoGenerator::new(32_768)
    }
}

fn section<'a>(lines: &[&'a str], heading: &str) -> Option<Vec<&'a str>> {
    let start = lines.iter().position(|l| *l == heading)? + 1;
    let end = lines[start..]
        .iter()
        .position(|l| [CONTEXT_HEADING, TOOLS_HEADING, CONVERSATION_HEADING].contains(l))
        .map_or(lines.len(), |p| start + p);
    Some(lines[start..end].to_vec())
}

fn first_context_entry(lines: &[&str]) -> Option<String> {
    let body = section(lines, CONTEXT_HEADING)?;
    let start = body.iter().position(|l| l.starts_with("[1] ("))?;
    let first = body[start];
    let after_uri = first.find(") ").map_or("", |i| &first[i + 2..]);
    let mut entry = after_uri.to_string();
    for line in &body[start + 1..] {
        if line.starts_with("[2] (") {
            break;
        }
        entry.push('\n');
        entry.push_str(line);
    }
    Some(entry.trim_end().to_string())
}

fn last_user_line(lines: &[&str]) -> Option<String> {
    let convo = section(lines, CONVERSATION_HEADING)?;
    convo
        .iter()
        .rev()
        .find_map(|l| l.strip_prefix("user: "))
        .map(str::to_string)
}

/// Splits `text` so that each piece holds one token and the whitespace in
/// front of it; the pieces concatenate back to `text`.
fn stream_pieces(text: &str) -> Vec<&str> {
    let ends: Vec<usize> = token_spans(text).map(|(_, e)| e).collect();
    let mut pieces = Vec::with_capacity(ends.len());
    let mut prev = 0;
    for &e in ends.iter().take(ends.len().saturating_sub(1)) {
        pieces.push(&text[prev..e]);
        prev = e;
    }
    if prev < text.len() {
        pieces.push(&text[prev..]);
    }
    pieces
}

impl Generator for TemplateEchoGenerator {
    fn spec(&self) -> &GeneratorSpec {
        &self.spec
    }

    fn generate_stream(
        &self,
        prompt: &str,
        params: &GenerationParams,
        on_token: &mut dyn FnMut(&str),
    ) -> Result<Completion, BackendError> {
        let prompt_tokens = count_tokens(prompt);
        if prompt_tokens > self.spec.context_tokens {
            return Err(BackendError::InvalidInput(format!(
                "prompt has {prompt_tokens} tokens, context is {}",
                self.spec.context_tokens
            )));
        }
        let full = Self::completion_for(prompt);
        let pieces = stream_pieces(&full);
        let mut finish_reason = FinishReason::Stop;
        let mut text = String::new();
        let mut completion_tokens = 0;
        for piece in pieces {
            let n = count_tokens(piece);
            if completion_tokens + n > params.max_tokens {
                finish_reason = FinishReason::Length;
                break;
            }
            completion_tokens += n;
            on_token(piece);
            text.push_str(piece);
        }
        Ok(Completion {
            text,
            finish_reason,
            prompt_tokens,
            completion_tokens,
        })
    }
}
