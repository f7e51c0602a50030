//! Exit codes and the error type every command returns.
//!
//! | code | meaning |
//! |-----:|---------|
//! | 0 | success |
//! | 1 | other failure |
//! | 2 | unreadable input or output, bind failure |
//! | 3 | chunking failure |
//! | 4 | dataset loading failure |
//! | 5 | connection failure |
//! | 64 | usage error |
//! | 78 | configuration error |

use thiserror::Error;

use ragx_core::chunker::ChunkError;
use ragx_core::eval::{DatasetError, EvalError};
use ragx_core::index::IndexError;
use ragx_core::ingest::IngestError;
use ragx_core::pipeline::ConfigError;
use ragx_service::BuildError;

pub const EXIT_OK: i32 = 0;
pub const EXIT_OTHER: i32 = 1;
pub const EXIT_IO: i32 = 2;
pub const EXIT_CHUNKING: i32 = 3;
pub const EXIT_DATASET: i32 = 4;
pub const EXIT_CONNECTION: i32 = 5;
pub const EXIT_USAGE: i32 = 64;
pub const EXIT_CONFIG: i32 = 78;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{stage}: {message}")]
    Io { stage: &'static str, message: String },
    #[error("chunk: {0}")]
    Chunking(String),
    #[error("dataset: {0}")]
    Dataset(String),
    #[error("{stage}: {message}")]
    Connection { stage: &'static str, message: String },
    #[error("usage: {0}")]
    Usage(String),
    #[error("config: {message}")]
    Config { key: Option<String>, message: String },
    #[error("{stage}: {message}")]
    Other { stage: &'static str, message: String },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io { .. } => EXIT_IO,
            CliError::Chunking(_) => EXIT_CHUNKING,
            CliError::Dataset(_) => EXIT_DATASET,
            CliError::Connection { .. } => EXIT_CONNECTION,
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Config { .. } => EXIT_CONFIG,
            CliError::Other { .. } => EXIT_OTHER,
        }
    }

    pub fn io(stage: &'static str, e: impl ToString) -> Self {
        CliError::Io {
            stage,
            message: e.to_string(),
        }
    }

    pub fn config_key(key: &str, message: impl Into<String>) -> Self {
        CliError::Config {
            key: Some(key.to_string()),
            message: format!("`{key}`: {}", message.into()),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config {
            key: e.key().map(str::to_owned),
            message: e.to_string(),
        }
    }
}

impl From<BuildError> for CliError {
    fn from(e: BuildError) -> Self {
        let key = match &e {
            BuildError::Config { role, .. } | BuildError::Backend { role, .. } => format!("backends.{role}"),
            BuildError::Source { .. } => "sources".into(),
            BuildError::Mcp { .. } => "mcp_endpoints".into(),
        };
        CliError::Config {
            key: Some(key),
            message: e.to_string(),
        }
    }
}

impl From<IngestError> for CliError {
    fn from(e: IngestError) -> Self {
        CliError::io("ingest", e)
    }
}

impl From<ChunkError> for CliError {
    fn from(e: ChunkError) -> Self {
        CliError::Chunking(e.to_string())
    }
}

impl From<IndexError> for CliError {
    fn from(e: IndexError) -> Self {
        match e {
            IndexError::Empty => CliError::Chunking(e.to_string()),
            IndexError::Embed { .. } => CliError::Connection {
                stage: "index",
                message: e.to_string(),
            },
            IndexError::Dimension { .. } => CliError::Other {
                stage: "index",
                message: e.to_string(),
            },
            IndexError::Unreadable { .. }
            | IndexError::Write { .. }
            | IndexError::Schema { .. }
            | IndexError::StatsMismatch { .. } => CliError::io("shard", e),
        }
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        CliError::Dataset(e.to_string())
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Ingest(e) => e.into(),
            EvalError::Chunk(e) => e.into(),
            EvalError::Index(e) => e.into(),
            EvalError::ZeroK => CliError::Usage(e.to_string()),
            EvalError::Pool(_) => CliError::Other {
                stage: "eval",
                message: e.to_string(),
            },
        }
    }
}
