//! The chat pipeline behind the backend service.
//!
//! One request runs: fan-out search over all sources, reranking to `top_k`,
//! an optional tool round (tool-decision prompt, one generator pass, tool
//! dispatch), then the streamed answer. Every request ends with a `chunks`
//! event holding exactly the answer prompt's context, a `timing` event and
//! `done`, including requests that fail part way.
//!
//! In the tool round all `tool_call` events are sent before dispatch; calls
//! to different endpoints run concurrently and their `tool_result` events
//! follow in call order.

pub mod config;
pub mod events;
pub mod source;

use std::collections::HashMap;
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::backends::{FinishReason, GenerationParams, Generator, PairScorer};
use crate::mcp::{parse_tool_calls, tool_result_to_chunk, ToolCall, ToolDescriptor, ToolEndpoint, ToolResult};
use crate::prompt::{assemble, validate_history, ChatMessage, PromptKind, PromptParts, Role};
use crate::rerank::{rerank_reduce, RerankConfig};
use crate::retrieval::{dedup, ScoredChunk};

pub use config::{BackendConfig, BackendKind, BackendsConfig, ConfigError, PipelineConfig, RerankSettings};
pub use events::{check_event_order, EventBody, StageTimings, StreamEvent};
pub use source::{fan_out_search, FanOut, LocalSource, SearchSource, SourceError};

/// Per-request overrides sent with `/v1/chat`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChatOptions {
    pub top_k: Option<usize>,
    pub rerank: Option<bool>,
    pub tools: Option<bool>,
    pub max_tokens: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub messages: Vec<ChatMessage>,
    #[serde(default)]
    pub options: ChatOptions,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RetrievalOutcome {
    pub chunks: Vec<ScoredChunk>,
    pub warnings: Vec<String>,
    /// Sources that failed, out of `source_count`.
    pub failed_sources: usize,
    pub source_count: usize,
    pub retrieve_ms: f64,
    pub rerank_ms: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ChatOutcome {
    pub answer: String,
    pub context: Vec<ScoredChunk>,
    pub tool_calls: Vec<ToolCall>,
    pub tool_results: Vec<ToolResult>,
    pub timings: StageTimings,
    pub finish_reason: Option<FinishReason>,
    /// A fatal error event was sent.
    pub failed: bool,
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1000.0
}

struct Emitter<'a> {
    seq: u64,
    sink: &'a mut dyn FnMut(StreamEvent),
}

impl Emitter<'_> {
    fn emit(&mut self, body: EventBody) {
        self.seq += 1;
        (self.sink)(StreamEvent { seq: self.seq, body });
    }

    fn error(&mut self, stage: &str, message: impl ToString, fatal: bool) {
        self.emit(EventBody::Error {
            stage: stage.to_string(),
            message: message.to_string(),
            fatal,
        });
    }
}

pub struct ChatPipeline {
    cfg: PipelineConfig,
    sources: Vec<Arc<dyn SearchSource>>,
    scorer: Arc<dyn PairScorer>,
    generator: Arc<dyn Generator>,
    tools: Vec<Arc<dyn ToolEndpoint>>,
}

impl ChatPipeline {
    pub fn new(
        cfg: PipelineConfig,
        sources: Vec<Arc<dyn SearchSource>>,
        scorer: Arc<dyn PairScorer>,
        generator: Arc<dyn Generator>,
        tools: Vec<Arc<dyn ToolEndpoint>>,
    ) -> Self {
        ChatPipeline {
            cfg,
            sources,
            scorer,
            generator,
            tools,
        }
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    pub fn source_count(&self) -> usize {
        self.sources.len()
    }

    pub fn tool_endpoint_count(&self) -> usize {
        self.tools.len()
    }

    pub fn generator(&self) -> &dyn Generator {
        self.generator.as_ref()
    }

    /// The retrieval query: the last `retrieval_query_turns` user messages.
    pub fn retrieval_query(&self, messages: &[ChatMessage]) -> String {
        let mut turns: Vec<&str> = messages
            .iter()
            .rev()
            .filter(|m| m.role == Role::User)
            .take(self.cfg.retrieval_query_turns)
            .map(|m| m.content.as_str())
            .collect();
        turns.reverse();
        turns.join("\n")
    }

    /// Fan-out search, then reranking (or fused order) down to `top_k`.
    pub fn retrieve(&self, query: &str, top_k: usize, rerank: bool) -> RetrievalOutcome {
        let mut out = RetrievalOutcome::default();
        let t0 = Instant::now();
        if self.sources.is_empty() {
            out.warnings.push("no sources are registered".into());
            return out;
        }
        let depth = self.cfg.candidate_depth.max(top_k);
        let fan = fan_out_search(query, &self.sources, depth);
        out.failed_sources = fan.failed_sources;
        out.source_count = self.sources.len();
        out.warnings.extend(fan.warnings);
        if fan.failed_sources == self.sources.len() {
            out.warnings.push(format!("all {} sources failed; answering without context", self.sources.len()));
        }
        out.retrieve_ms = ms(t0.elapsed());

        let t1 = Instant::now();
        let mut chunks = fan.chunks;
        if rerank && !chunks.is_empty() {
            let cfg = RerankConfig {
                target_k: top_k,
                context_cap_tokens: self.cfg.rerank.context_cap_tokens.min(self.scorer.spec().context_tokens),
                keep_fraction: self.cfg.rerank.keep_fraction,
            };
            match rerank_reduce(query, chunks.clone(), &cfg, self.scorer.as_ref()) {
                Ok(r) => chunks = r.chunks,
                Err(e) => out.warnings.push(format!("reranking failed, keeping fused order: {e}")),
            }
        }
        chunks.truncate(top_k);
        out.rerank_ms = ms(t1.elapsed());
        out.chunks = chunks;
        out
    }

    fn list_all_tools(&self, em: &mut Emitter<'_>) -> Vec<ToolDescriptor> {
        let listed: Vec<_> = thread::scope(|s| {
            let handles: Vec<_> = self.tools.iter().map(|t| s.spawn(move || t.list_tools())).collect();
            handles.into_iter().map(|h| h.join()).collect()
        });
        let mut all = Vec::new();
        for (endpoint, r) in self.tools.iter().zip(listed) {
            match r {
                Ok(Ok(d)) => all.extend(d),
                Ok(Err(e)) => em.error("tools", format!("listing tools of {} failed: {e}", endpoint.name()), false),
                Err(_) => em.error("tools", format!("listing tools of {} panicked", endpoint.name()), false),
            }
        }
        all
    }

    fn dispatch(&self, calls: &[ToolCall]) -> Vec<ToolResult> {
        let by_name: HashMap<&str, &Arc<dyn ToolEndpoint>> = self.tools.iter().map(|t| (t.name(), t)).collect();
        let mut groups: Vec<(&str, Vec<usize>)> = Vec::new();
        for (i, c) in calls.iter().enumerate() {
            match groups.iter_mut().find(|(name, _)| *name == c.endpoint_name) {
                Some((_, members)) => members.push(i),
                None => groups.push((&c.endpoint_name, vec![i])),
            }
        }
        let mut results: Vec<Option<ToolResult>> = vec![None; calls.len()];
        let finished: Vec<Vec<(usize, ToolResult)>> = thread::scope(|s| {
            let handles: Vec<_> = groups
                .iter()
                .map(|(name, members)| {
                    let endpoint = by_name.get(name).copied();
                    s.spawn(move || {
                        members
                            .iter()
                            .map(|&i| {
                                let result = match endpoint {
                                    Some(ep) => ep.call_tool(&calls[i]),
                                    None => ToolResult::failed(&calls[i].call_id, format!("no endpoint named {name}")),
                                };
                                (i, result)
                            })
                            .collect()
                    })
                })
                .collect();
            handles
                .into_iter()
                .zip(&groups)
                .map(|(h, (_, members))| {
                    h.join().unwrap_or_else(|_| {
                        members
                            .iter()
                            .map(|&i| (i, ToolResult::failed(&calls[i].call_id, "tool dispatch panicked")))
                            .collect()
                    })
                })
                .collect()
        });
        for (i, r) in finished.into_iter().flatten() {
            results[i] = Some(r);
        }
        results
            .into_iter()
            .zip(calls)
            .map(|(r, c)| r.unwrap_or_else(|| ToolResult::failed(&c.call_id, "no result")))
            .collect()
    }

    fn tool_round(&self, parts: &mut PromptParts, params: &GenerationParams, em: &mut Emitter<'_>, outcome: &mut ChatOutcome) {
        let descriptors = self.list_all_tools(em);
        if descriptors.is_empty() {
            return;
        }
        parts.tool_descriptors = descriptors;
        let prompt = match assemble(parts, self.cfg.budget, PromptKind::ToolDecision, self.cfg.section_overhead_tokens) {
            Ok(p) => p,
            Err(e) => {
                em.error("tools", format!("skipping tools: {e}"), false);
                return;
            }
        };
        let decision = match self.generator.generate(&prompt.prompt, params) {
            Ok(c) => c.text,
            Err(e) => {
                em.error("tools", format!("skipping tools: tool decision failed: {e}"), false);
                return;
            }
        };
        let parsed = parse_tool_calls(&decision, &parts.tool_descriptors);
        for d in parsed.diagnostics {
            em.error("tools", d, false);
        }
        if parsed.calls.is_empty() {
            return;
        }
        for call in &parsed.calls {
            em.emit(EventBody::ToolCall(call.clone()));
        }
        let results = self.dispatch(&parsed.calls);
        let mut tool_chunks = Vec::new();
        for (call, result) in parsed.calls.iter().zip(&results) {
            em.emit(EventBody::ToolResult(result.clone()));
            tool_chunks.push(ScoredChunk::new(tool_result_to_chunk(result, call, self.cfg.chunk_tokens)));
        }
        let retrieved: std::collections::HashSet<&str> = parts.chunks.iter().map(|c| c.id()).collect();
        let tool_chunks: Vec<ScoredChunk> = dedup(tool_chunks)
            .into_iter()
            .filter(|c| !retrieved.contains(c.id()))
            .collect();
        parts.tool_chunks = tool_chunks;
        outcome.tool_calls = parsed.calls;
        outcome.tool_results = results;
    }

    /// Runs one chat request, sending its events to `sink` in order.
    pub fn handle_chat(&self, request: &ChatRequest, sink: &mut dyn FnMut(StreamEvent)) -> ChatOutcome {
        let start = Instant::now();
        let mut em = Emitter { seq: 0, sink };
        let mut outcome = ChatOutcome::default();
        self.run(request, &mut em, &mut outcome, start);
        em.emit(EventBody::Chunks {
            chunks: outcome.context.clone(),
        });
        outcome.timings.total_ms = ms(start.elapsed());
        em.emit(EventBody::Timing(outcome.timings));
        em.emit(EventBody::Done {
            finish_reason: outcome.finish_reason,
        });
        outcome
    }

    fn run(&self, request: &ChatRequest, em: &mut Emitter<'_>, outcome: &mut ChatOutcome, start: Instant) {
        let messages = &request.messages;
        if let Err(m) = validate_history(messages) {
            em.error("request", m, true);
            outcome.failed = true;
            return;
        }
        let top_k = request.options.top_k.unwrap_or(self.cfg.top_k);
        if top_k == 0 {
            em.error("request", "top_k must be at least 1", true);
            outcome.failed = true;
            return;
        }
        let mut params = self.cfg.generation.clone();
        if let Some(n) = request.options.max_tokens {
            params.max_tokens = n;
        }

        let query = self.retrieval_query(messages);
        let retrieval = self.retrieve(&query, top_k, request.options.rerank.unwrap_or(self.cfg.rerank.enabled));
        for w in &retrieval.warnings {
            em.error("retrieve", w, false);
        }
        outcome.timings.retrieve_ms = retrieval.retrieve_ms;
        outcome.timings.rerank_ms = retrieval.rerank_ms;

        let (latest, history) = messages.split_last().expect("validated non-empty");
        let mut parts = PromptParts {
            system_preamble: self.cfg.system_preamble.clone(),
            chunks: retrieval.chunks,
            tool_chunks: Vec::new(),
            tool_descriptors: Vec::new(),
            history: history.to_vec(),
            latest_user: Some(latest.clone()),
        };

        if request.options.tools.unwrap_or(true) && !self.tools.is_empty() {
            let t0 = Instant::now();
            self.tool_round(&mut parts, &params, em, outcome);
            outcome.timings.tool_ms = ms(t0.elapsed());
        }

        let answer = match assemble(&parts, self.cfg.budget, PromptKind::Answer, self.cfg.section_overhead_tokens) {
            Ok(a) => a,
            Err(e) => {
                em.error("prompt", e, true);
                outcome.failed = true;
                return;
            }
        };
        outcome.context = answer.context;

        let g0 = Instant::now();
        let mut first_token: Option<Duration> = None;
        let mut text = String::new();
        let result = self.generator.generate_stream(&answer.prompt, &params, &mut |t: &str| {
            first_token.get_or_insert_with(|| g0.elapsed());
            text.push_str(t);
            em.emit(EventBody::Token { text: t.to_string() });
        });
        outcome.timings.generate_first_token_ms = ms(first_token.unwrap_or_else(|| g0.elapsed()));
        outcome.answer = text;
        match result {
            Ok(c) => outcome.finish_reason = Some(c.finish_reason),
            Err(e) => {
                em.error("generate", e, true);
                outcome.failed = true;
            }
        }
        debug_assert!(ms(start.elapsed()) >= outcome.timings.retrieve_ms);
    }
}
