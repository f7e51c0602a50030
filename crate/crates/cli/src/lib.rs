//! The `ragx` command line.
//!
//! Every command accepts `--config`; without it the `RAGX_CONFIG`
//! environment variable is used, then `./ragx.toml` when present, then
//! built-in defaults. Exit codes are listed in [`error`].

pub mod commands;
pub mod error;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use ragx_core::eval::{DatasetKind, HitsMode};
use ragx_core::pipeline::config::CONFIG_ENV;
use ragx_core::pipeline::PipelineConfig;

pub use error::CliError;

pub const DEFAULT_CONFIG_FILE: &str = "ragx.toml";

#[derive(Debug, Parser)]
#[command(name = "ragx", version, about = "Retrieval-augmented ChatOps: ingest, serve, evaluate, chat")]
pub struct Cli {
    /// Pipeline config (TOML, or JSON when the name ends in `.json`).
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Convert, chunk and index documents into a shard file.
    Ingest(IngestArgs),
    /// Serve hybrid search over one shard.
    ServeSource(ServeSourceArgs),
    /// Serve the chat backend.
    Serve(ServeArgs),
    /// Score retrieval on a QA dataset.
    Eval(EvalArgs),
    /// Chat with a running backend from the terminal.
    Chat(ChatArgs),
    /// Serve the stub MCP tool server.
    StubMcp(StubMcpArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// A JSON-lines manifest or a directory of `.md`/`.txt` files.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Defaults to `chunk_tokens` from the config (350).
    #[arg(long)]
    pub chunk_tokens: Option<usize>,
    /// Embedding model tag; `hash-bow-64` selects the built-in hashing embedder.
    #[arg(long)]
    pub embedder: Option<String>,
    /// Source id for directory input; defaults to the directory name.
    #[arg(long)]
    pub source_id: Option<String>,
    /// Shard id; defaults to the output file stem.
    #[arg(long)]
    pub shard_id: Option<String>,
}

#[derive(Debug, Args)]
pub struct ServeSourceArgs {
    #[arg(long)]
    pub shard: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8081")]
    pub bind: String,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Overrides `bind` from the config.
    #[arg(long)]
    pub bind: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DatasetArg {
    Squad,
    Multihop,
    Mlqa,
}

impl From<DatasetArg> for DatasetKind {
    fn from(d: DatasetArg) -> Self {
        match d {
            DatasetArg::Squad => DatasetKind::Squad,
            DatasetArg::Multihop => DatasetKind::Multihop,
            DatasetArg::Mlqa => DatasetKind::Mlqa,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum HitsArg {
    Any,
    Fraction,
}

impl From<HitsArg> for HitsMode {
    fn from(h: HitsArg) -> Self {
        match h {
            HitsArg::Any => HitsMode::Any,
            HitsArg::Fraction => HitsMode::Fraction,
        }
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, value_enum)]
    pub dataset: DatasetArg,
    #[arg(long)]
    pub path: PathBuf,
    #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u64).range(1..))]
    pub k: u64,
    /// Report path: JSON, or the text table when the name ends in `.txt`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = HitsArg::Any)]
    pub hits_mode: HitsArg,
    /// Rank by fused retrieval score only.
    #[arg(long)]
    pub no_rerank: bool,
    /// Worker threads; 0 uses one per core.
    #[arg(long, default_value_t = 0)]
    pub parallelism: usize,
    #[arg(long)]
    pub chunk_tokens: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ChatArgs {
    /// Backend base URL; defaults to `http://` plus `bind` from the config.
    #[arg(long)]
    pub url: Option<String>,
    #[arg(long)]
    pub top_k: Option<usize>,
    /// Request timeout in seconds.
    #[arg(long, default_value_t = 120)]
    pub timeout_secs: u64,
}

#[derive(Debug, Args)]
pub struct StubMcpArgs {
    #[arg(long, default_value = "127.0.0.1:8090")]
    pub bind: String,
}

/// Finds the config file: explicit path, then `RAGX_CONFIG`, then
/// `ragx.toml` in `cwd` when it exists.
pub fn config_path(flag: Option<&Path>, env: Option<OsString>, cwd: &Path) -> Option<PathBuf> {
    if let Some(p) = flag {
        return Some(p.to_path_buf());
    }
    if let Some(p) = env.filter(|v| !v.is_empty()) {
        return Some(PathBuf::from(p));
    }
    let default = cwd.join(DEFAULT_CONFIG_FILE);
    default.is_file().then_some(default)
}

pub fn load_config(flag: Option<&Path>) -> Result<PipelineConfig, CliError> {
    let cwd = std::env::current_dir().unwrap_or_else(|_| PathBuf::from("."));
    match config_path(flag, std::env::var_os(CONFIG_ENV), &cwd) {
        Some(path) => Ok(PipelineConfig::load(&path)?),
        None => {
            let mut cfg = PipelineConfig::default();
            cfg.apply_env();
            Ok(cfg)
        }
    }
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { error::EXIT_USAGE } else { error::EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => error::EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            if let CliError::Config { key: Some(key), .. } = &e {
                eprintln!("offending key: {key}");
            }
            e.exit_code()
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    let cfg = load_config(cli.config.as_deref())?;
    match cli.command {
        Command::Ingest(a) => commands::ingest::run(&cfg, &a),
        Command::ServeSource(a) => commands::serve::serve_source(&cfg, &a),
        Command::Serve(a) => commands::serve::serve(&cfg, &a),
        Command::Eval(a) => commands::eval::run(&cfg, &a),
        Command::Chat(a) => commands::chat::run(&cfg, &a),
        Command::StubMcp(a) => commands::serve::stub_mcp(&a),
    }
}
