use std::io::{BufRead, IsTerminal, Write};
use std::time::Duration;

use ragx_core::pipeline::{ChatOptions, ChatRequest, EventBody, PipelineConfig};
use ragx_core::prompt::ChatMessage;
use ragx_core::retrieval::ScoredChunk;
use ragx_service::{ChatClient, ClientError};

use crate::{ChatArgs, CliError};

fn connection(e: ClientError) -> CliError {
    CliError::Connection {
        stage: "chat",
        message: format!("connection lost: {e}"),
    }
}

/// `[n] uri > heading > path`
pub fn citation(n: usize, chunk: &ScoredChunk) -> String {
    let c = &chunk.chunk;
    if c.heading_path.is_empty() {
        format!("[{n}] {}", c.uri)
    } else {
        format!("[{n}] {} > {}", c.uri, c.heading_path.join(" > "))
    }
}

/// Reads one question per line until end of input; each answer is printed
/// as it streams, followed by its numbered sources.
pub fn run(cfg: &PipelineConfig, args: &ChatArgs) -> Result<(), CliError> {
    let url = args.url.clone().unwrap_or_else(|| format!("http://{}", cfg.bind));
    let client = ChatClient::new(&url, Duration::from_secs(args.timeout_secs)).map_err(connection)?;
    let stdin = std::io::stdin();
    let interactive = stdin.is_terminal();
    let mut history: Vec<ChatMessage> = Vec::new();
    let mut stdout = std::io::stdout();
    loop {
        if interactive {
            eprint!("> ");
        }
        let mut line = String::new();
        if stdin.lock().read_line(&mut line).map_err(|e| CliError::io("stdin", e))? == 0 {
            return Ok(());
        }
        let question = line.trim();
        if question.is_empty() {
            continue;
        }
        history.push(ChatMessage::user(question));
        let request = ChatRequest {
            messages: history.clone(),
            options: ChatOptions {
                top_k: args.top_k,
                ..ChatOptions::default()
            },
        };
        let mut answer = String::new();
        let mut sources = Vec::new();
        client
            .chat(&request, &mut |event| match event.body {
                EventBody::Token { text } => {
                    answer.push_str(&text);
                    print!("{text}");
                    let _ = stdout.flush();
                }
                EventBody::ToolCall(call) => eprintln!("[tool] {}/{}", call.endpoint_name, call.tool_name),
                EventBody::ToolResult(r) if !r.ok => eprintln!("[tool] {} failed: {}", r.call_id, r.content_text),
                EventBody::Error { stage, message, fatal } => {
                    let label = if fatal { "error" } else { "warning" };
                    eprintln!("{label} [{stage}]: {message}");
                }
                EventBody::Chunks { chunks } => sources = chunks,
                _ => {}
            })
            .map_err(connection)?;
        println!();
        println!("Sources:");
        for (i, chunk) in sources.iter().enumerate() {
            println!("{}", citation(i + 1, chunk));
        }
        let _ = stdout.flush();
        if answer.is_empty() {
            history.pop();
        } else {
            history.push(ChatMessage::assistant(answer));
        }
    }
}
