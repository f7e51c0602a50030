//! Prompt assembly under a hard token budget.
//!
//! A prompt is a sequence of sections joined by blank lines: the system
//! preamble, `## Context` with numbered entries `[n] (uri) body`, `## Tools`
//! (tool-decision prompts only) and `## Conversation` with one
//! `role: content` line per message, the latest user message last. Each
//! section is charged a fixed overhead on top of its tokens.
//!
//! When the prompt does not fit, the oldest history messages go first. Only
//! when no history is left and it still does not fit are context entries
//! dropped: retrieved chunks from the lowest rank upward, then tool results.

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mcp::{ToolDescriptor, TOOL_CALL_FENCE};
use crate::retrieval::ScoredChunk;
use crate::tokenize::count_tokens;

pub const CONTEXT_HEADING: &str = "## Context";
pub const TOOLS_HEADING: &str = "## Tools";
pub const CONVERSATION_HEADING: &str = "## Conversation";
pub const DEFAULT_SECTION_OVERHEAD: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
    Tool,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
            Role::Tool => "tool",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub at: Option<DateTime<Utc>>,
}

impl ChatMessage {
    pub fn new(role: Role, content: impl Into<String>) -> Self {
        ChatMessage {
            role,
            content: content.into(),
            at: None,
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage::new(Role::User, content)
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        ChatMessage::new(Role::Assistant, content)
    }
}

/// Checks a conversation: non-empty user/assistant messages, timestamps
/// (where given) in order, and a user message last.
pub fn validate_history(messages: &[ChatMessage]) -> Result<(), String> {
    let last = messages.last().ok_or("the conversation is empty")?;
    if last.role != Role::User {
        return Err(format!("the last message must come from the user, not {}", last.role.as_str()));
    }
    for (i, m) in messages.iter().enumerate() {
        if matches!(m.role, Role::User | Role::Assistant) && m.content.trim().is_empty() {
            return Err(format!("message {i} ({}) is empty", m.role.as_str()));
        }
    }
    let stamps: Vec<DateTime<Utc>> = messages.iter().filter_map(|m| m.at).collect();
    if stamps.windows(2).any(|w| w[0] > w[1]) {
        return Err("message timestamps are not in order".into());
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Budget {
    pub context_tokens: usize,
    pub reserved_generation_tokens: usize,
}

impl Default for Budget {
    fn default() -> Self {
        Budget {
            context_tokens: 8192,
            reserved_generation_tokens: 512,
        }
    }
}

impl Budget {
    pub fn validate(&self) -> Result<(), String> {
        if self.reserved_generation_tokens == 0 {
            return Err("reserved_generation_tokens must be positive".into());
        }
        if self.context_tokens <= self.reserved_generation_tokens {
            return Err(format!(
                "context_tokens ({}) must exceed reserved_generation_tokens ({})",
                self.context_tokens, self.reserved_generation_tokens
            ));
        }
        Ok(())
    }

    pub fn available(&self) -> usize {
        self.context_tokens.saturating_sub(self.reserved_generation_tokens)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PromptKind {
    /// Offers the registered tools and asks the model whether to call any.
    ToolDecision,
    Answer,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PromptParts {
    pub system_preamble: String,
    /// Retrieved chunks, best first.
    pub chunks: Vec<ScoredChunk>,
    /// Tool results as chunks, rendered after the retrieved ones.
    pub tool_chunks: Vec<ScoredChunk>,
    pub tool_descriptors: Vec<ToolDescriptor>,
    /// Earlier messages, oldest first, excluding `latest_user`.
    pub history: Vec<ChatMessage>,
    pub latest_user: Option<ChatMessage>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("invalid budget: {0}")]
    InvalidBudget(String),
    #[error("the prompt needs a latest user message")]
    MissingUser,
    #[error("preamble, tools and the latest message need {needed} tokens but only {available} are available")]
    IrreducibleOverflow { needed: usize, available: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssembledPrompt {
    pub prompt: String,
    pub retained_history: usize,
    pub retained_chunks: usize,
    pub retained_tool_chunks: usize,
    /// The context entries in prompt order; entry `[n]` is `context[n-1]`.
    pub context: Vec<ScoredChunk>,
    /// Prompt tokens plus section overheads.
    pub cost: usize,
}

pub fn render_context_entry(n: usize, chunk: &ScoredChunk) -> String {
    format!("[{n}] ({}) {}", chunk.chunk.uri, chunk.chunk.body)
}

pub fn render_message(m: &ChatMessage) -> String {
    format!("{}: {}", m.role.as_str(), m.content)
}

pub fn render_tools_section(tools: &[ToolDescriptor]) -> String {
    let mut s = format!(
        "{TOOLS_HEADING}\n\nTo call a tool, reply with one fenced block per call and nothing else:\n\
         ```{TOOL_CALL_FENCE}\n{{\"tool\": \"<name>\", \"arguments\": {{}}}}\n```\n\
         Call a tool only when the user asks for an action. Available tools:"
    );
    for t in tools {
        s.push_str(&format!(
            "\n- {} ({}): {}\n  parameters: {}",
            t.tool_name, t.endpoint_name, t.description, t.input_schema
        ));
    }
    s
}

/// Renders a prompt with exactly the given pieces and no budgeting. Returns
/// the prompt and its number of sections.
pub fn render_prompt(
    preamble: &str,
    context: &[ScoredChunk],
    tools: Option<&[ToolDescriptor]>,
    history: &[ChatMessage],
    latest_user: &ChatMessage,
) -> (String, usize) {
    let mut sections = Vec::new();
    if !preamble.is_empty() {
        sections.push(preamble.to_string());
    }
    let mut ctx = CONTEXT_HEADING.to_string();
    for (i, c) in context.iter().enumerate() {
        ctx.push_str("\n\n");
        ctx.push_str(&render_context_entry(i + 1, c));
    }
    sections.push(ctx);
    if let Some(tools) = tools {
        sections.push(render_tools_section(tools));
    }
    let mut convo = format!("{CONVERSATION_HEADING}\n");
    for m in history.iter().chain(std::iter::once(latest_user)) {
        convo.push('\n');
        convo.push_str(&render_message(m));
    }
    sections.push(convo);
    let n = sections.len();
    (sections.join("\n\n"), n)
}

/// Fits `parts` into `budget`. Token counts are additive over whitespace
/// joins, so every piece is counted once and the final prompt is rendered
/// only once.
pub fn assemble(
    parts: &PromptParts,
    budget: Budget,
    kind: PromptKind,
    section_overhead: usize,
) -> Result<AssembledPrompt, PromptError> {
    budget.validate().map_err(PromptError::InvalidBudget)?;
    let latest = parts.latest_user.as_ref().ok_or(PromptError::MissingUser)?;
    let available = budget.available();
    let tools = (kind == PromptKind::ToolDecision).then_some(parts.tool_descriptors.as_slice());

    let sections = usize::from(!parts.system_preamble.is_empty()) + 2 + usize::from(tools.is_some());
    let fixed = sections * section_overhead
        + count_tokens(&parts.system_preamble)
        + count_tokens(CONTEXT_HEADING)
        + tools.map_or(0, |t| count_tokens(&render_tools_section(t)))
        + count_tokens(CONVERSATION_HEADING)
        + count_tokens(&render_message(latest));
    if fixed > available {
        return Err(PromptError::IrreducibleOverflow { needed: fixed, available });
    }

    // `[n]` is three tokens for every n, so entry costs do not depend on
    // their final position.
    let entry_cost = |c: &ScoredChunk| count_tokens(&render_context_entry(1, c));
    let chunk_costs: Vec<usize> = parts.chunks.iter().map(entry_cost).collect();
    let tool_costs: Vec<usize> = parts.tool_chunks.iter().map(entry_cost).collect();
    let mut total = fixed + chunk_costs.iter().sum::<usize>() + tool_costs.iter().sum::<usize>();

    let mut keep_chunks = parts.chunks.len();
    let mut keep_tools = parts.tool_chunks.len();
    let mut keep_history = 0;
    if total <= available {
        for m in parts.history.iter().rev() {
            let c = count_tokens(&render_message(m));
            if total + c > available {
                break;
            }
            total += c;
            keep_history += 1;
        }
    } else {
        while total > available && keep_chunks > 0 {
            keep_chunks -= 1;
            total -= chunk_costs[keep_chunks];
        }
        while total > available && keep_tools > 0 {
            keep_tools -= 1;
            total -= tool_costs[keep_tools];
        }
    }

    let context: Vec<ScoredChunk> = parts.chunks[..keep_chunks]
        .iter()
        .chain(&parts.tool_chunks[..keep_tools])
        .cloned()
        .collect();
    let history = &parts.history[parts.history.len() - keep_history..];
    let (prompt, n) = render_prompt(&parts.system_preamble, &context, tools, history, latest);
    debug_assert_eq!(n, sections);
    debug_assert_eq!(count_tokens(&prompt) + n * section_overhead, total);
    Ok(AssembledPrompt {
        prompt,
        retained_history: keep_history,
        retained_chunks: keep_chunks,
        retained_tool_chunks: keep_tools,
        context,
        cost: total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chunker::Chunk;
    use serde_json::json;

    fn sc(uri: &str, body: &str) -> ScoredChunk {
        ScoredChunk::new(Chunk {
            id: crate::make_chunk_id("s", &[], body),
            source_id: "s".into(),
            uri: uri.into(),
            heading_path: vec![],
            body: body.into(),
            token_count: count_tokens(body) as u32,
            created_at: DateTime::from_timestamp_millis(0).unwrap(),
        })
    }

    fn parts(history: usize, chunks: usize) -> PromptParts {
        PromptParts {
            system_preamble: "You answer questions about our systems.".into(),
            chunks: (0..chunks).map(|i| sc(&format!("file://d{i}.md"), &format!("fact number {i}"))).collect(),
            tool_chunks: vec![],
            tool_descriptors: vec![],
            history: (0..history)
                .map(|i| if i % 2 == 0 { ChatMessage::user(format!("q{i}")) } else { ChatMessage::assistant(format!("a{i}")) })
                .collect(),
            latest_user: Some(ChatMessage::user("where is the log?")),
        }
    }

    const BIG: Budget = Budget {
        context_tokens: 100_000,
        reserved_generation_tokens: 100,
    };

    #[test]
    fn everything_fits() {
        let p = parts(4, 3);
        let a = assemble(&p, BIG, PromptKind::Answer, 8).unwrap();
        assert_eq!((a.retained_history, a.retained_chunks), (4, 3));
        assert!(a.prompt.ends_with("user: where is the log?"));
        assert!(a.prompt.contains("[3] (file://d2.md) fact number 2"));
    }

    #[test]
    fn single_chunk_single_entry() {
        let a = assemble(&parts(0, 1), BIG, PromptKind::Answer, 8).unwrap();
        assert_eq!(a.prompt.matches("[1]").count(), 1);
        assert!(!a.prompt.contains("[2]"));
    }

    #[test]
    fn exact_core_budget_drops_history() {
        let p = parts(3, 2);
        let core = assemble(&PromptParts { history: vec![], ..p.clone() }, BIG, PromptKind::Answer, 8).unwrap().cost;
        let budget = Budget {
            context_tokens: core + 10,
            reserved_generation_tokens: 10,
        };
        let a = assemble(&p, budget, PromptKind::Answer, 8).unwrap();
        assert_eq!(a.retained_history, 0);
        assert_eq!(a.retained_chunks, 2);
        assert_eq!(a.cost, core);
    }

    #[test]
    fn tools_are_listed_verbatim() {
        let mut p = parts(0, 1);
        for name in ["create_issue", "echo"] {
            p.tool_descriptors.push(ToolDescriptor {
                endpoint_name: "stub".into(),
                tool_name: name.into(),
                description: "d".into(),
                input_schema: json!({"type": "object"}),
            });
        }
        let a = assemble(&p, BIG, PromptKind::ToolDecision, 8).unwrap();
        let tools = a.prompt.split(TOOLS_HEADING).nth(1).unwrap();
        assert!(tools.contains("create_issue") && tools.contains("echo"));
        let answer = assemble(&p, BIG, PromptKind::Answer, 8).unwrap();
        assert!(!answer.prompt.contains(TOOLS_HEADING));
    }

    #[test]
    fn tool_results_follow_retrieved_chunks() {
        let mut p = parts(0, 2);
        p.tool_chunks.push(sc("mcp://stub/echo", "# echo\n\nx=1"));
        let a = assemble(&p, BIG, PromptKind::Answer, 8).unwrap();
        assert!(a.prompt.contains("[3] (mcp://stub/echo) # echo"));
        assert_eq!(a.context.len(), 3);
    }

    #[test]
    fn irreducible_overflow() {
        let budget = Budget {
            context_tokens: 12,
            reserved_generation_tokens: 2,
        };
        assert!(matches!(
            assemble(&parts(0, 0), budget, PromptKind::Answer, 8),
            Err(PromptError::IrreducibleOverflow { .. })
        ));
    }

    #[test]
    fn chunks_drop_from_the_bottom_then_tools() {
        let mut p = parts(2, 3);
        p.tool_chunks.push(sc("mcp://stub/echo", "tool output"));
        let fixed = assemble(&PromptParts { chunks: vec![], tool_chunks: vec![], history: vec![], ..p.clone() }, BIG, PromptKind::Answer, 8)
            .unwrap()
            .cost;
        let first = count_tokens(&render_context_entry(1, &p.chunks[0]));
        let tool = count_tokens(&render_context_entry(1, &p.tool_chunks[0]));
        let kept = |available: usize| {
            let budget = Budget {
                context_tokens: available + 1,
                reserved_generation_tokens: 1,
            };
            let a = assemble(&p, budget, PromptKind::Answer, 8).unwrap();
            (a.retained_history, a.retained_chunks, a.retained_tool_chunks)
        };
        assert_eq!(kept(fixed + first + tool), (0, 1, 1));
        assert_eq!(kept(fixed + tool), (0, 0, 1));
        assert_eq!(kept(fixed), (0, 0, 0));
    }

    #[test]
    fn history_validation() {
        assert!(validate_history(&[ChatMessage::user("hi")]).is_ok());
        assert!(validate_history(&[]).is_err());
        assert!(validate_history(&[ChatMessage::user("hi"), ChatMessage::assistant("yo")]).is_err());
        assert!(validate_history(&[ChatMessage::user("  ")]).is_err());
        let mut a = ChatMessage::user("a");
        a.at = Some(DateTime::from_timestamp_millis(10).unwrap());
        let mut b = ChatMessage::user("b");
        b.at = Some(DateTime::from_timestamp_millis(5).unwrap());
        assert!(validate_history(&[a, b]).is_err());
    }

    #[test]
    fn invalid_budget() {
        let b = Budget {
            context_tokens: 10,
            reserved_generation_tokens: 10,
        };
        assert!(matches!(assemble(&parts(0, 0), b, PromptKind::Answer, 8), Err(PromptError::InvalidBudget(_))));
    }
}
