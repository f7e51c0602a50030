//! Raw artifact conversion, Markdown normalization and structural parsing.

mod normalize;
mod parse;

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use normalize::normalize_markdown;
pub(crate) use normalize::Fence;
pub(crate) use parse::is_list_item;
pub use parse::{parse_sections, split_blocks, Block, BlockKind, Heading, Section};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("artifact {source_id}: body is not valid UTF-8 (byte offset {offset})")]
    Decode { source_id: String, offset: usize },
    #[error("artifact {source_id}: unsupported media kind `{kind}`")]
    UnsupportedFormat { source_id: String, kind: String },
    #[error("artifact has an empty source_id")]
    EmptySourceId,
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("manifest {path} line {line}: {message}")]
    Manifest {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

/// Media kind of a raw artifact, keyed into the converter registry.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MediaKind(String);

impl MediaKind {
    pub fn markdown() -> Self {
        MediaKind("markdown".into())
    }

    pub fn plain_text() -> Self {
        MediaKind("plain_text".into())
    }

    pub fn new(kind: impl Into<String>) -> Self {
        MediaKind(kind.into().to_ascii_lowercase())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Guess from a file extension; `None` for unknown extensions.
    pub fn from_extension(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "md" | "markdown" | "mdown" => Some(Self::markdown()),
            "txt" | "text" => Some(Self::plain_text()),
            _ => None,
        }
    }
}

impl fmt::Display for MediaKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawArtifact {
    pub source_id: String,
    pub uri: String,
    pub media_kind: MediaKind,
    pub body: Vec<u8>,
    pub fetched_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MarkdownDoc {
    pub source_id: String,
    pub uri: String,
    pub text: String,
    pub fetched_at: DateTime<Utc>,
}

/// Turns decoded artifact text into (not yet normalized) Markdown.
pub trait Converter: Send + Sync {
    fn to_markdown(&self, text: &str) -> String;
}

/// Markdown passes through unchanged.
pub struct IdentityMarkdown;

impl Converter for IdentityMarkdown {
    fn to_markdown(&self, text: &str) -> String {
        text.to_string()
    }
}

/// Plain text: blank-line separated paragraphs are kept as they are.
pub struct PlainText;

impl Converter for PlainText {
    fn to_markdown(&self, text: &str) -> String {
        text.to_string()
    }
}

pub struct ConverterRegistry {
    converters: HashMap<MediaKind, Box<dyn Converter>>,
}

impl Default for ConverterRegistry {
    fn default() -> Self {
        let mut registry = ConverterRegistry::empty();
        registry.register(MediaKind::markdown(), IdentityMarkdown);
        registry.register(MediaKind::plain_text(), PlainText);
        registry
    }
}

impl ConverterRegistry {
    pub fn empty() -> Self {
        ConverterRegistry {
            converters: HashMap::new(),
        }
    }

    pub fn register(&mut self, kind: MediaKind, converter: impl Converter + 'static) {
        self.converters.insert(kind, Box::new(converter));
    }

    pub fn supports(&self, kind: &MediaKind) -> bool {
        self.converters.contains_key(kind)
    }

    pub fn convert(&self, artifact: &RawArtifact) -> Result<MarkdownDoc, IngestError> {
        if artifact.source_id.is_empty() {
            return Err(IngestError::EmptySourceId);
        }
        let converter =
            self.converters
                .get(&artifact.media_kind)
                .ok_or_else(|| IngestError::UnsupportedFormat {
                    source_id: artifact.source_id.clone(),
                    kind: artifact.media_kind.to_string(),
                })?;
        let text = std::str::from_utf8(&artifact.body).map_err(|e| IngestError::Decode {
            source_id: artifact.source_id.clone(),
            offset: e.valid_up_to(),
        })?;
        Ok(MarkdownDoc {
            source_id: artifact.source_id.clone(),
            uri: artifact.uri.clone(),
            text: normalize_markdown(&converter.to_markdown(text)),
            fetched_at: artifact.fetched_at,
        })
    }
}

/// Converts with the bundled converters (identity Markdown and plain text).
pub fn convert_to_markdown(artifact: &RawArtifact) -> Result<MarkdownDoc, IngestError> {
    ConverterRegistry::default().convert(artifact)
}

/// One line of a JSON-lines ingest manifest.
#[derive(Debug, Clone, Deserialize)]
pub struct ManifestEntry {
    pub source_id: String,
    pub uri: String,
    pub media_kind: String,
    pub path: PathBuf,
}

/// Reads artifacts listed in a JSON-lines manifest. Relative paths resolve
/// against the manifest's directory.
pub fn read_manifest(path: &Path, fetched_at: DateTime<Utc>) -> Result<Vec<RawArtifact>, IngestError> {
    let io = |source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    };
    let text = std::fs::read_to_string(path).map_err(io)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut artifacts = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let entry: ManifestEntry =
            serde_json::from_str(line).map_err(|e| IngestError::Manifest {
                path: path.to_path_buf(),
                line: idx + 1,
                message: e.to_string(),
            })?;
        let file = if entry.path.is_absolute() {
            entry.path.clone()
        } else {
            base.join(&entry.path)
        };
        let body = std::fs::read(&file).map_err(|source| IngestError::Io {
            path: file.clone(),
            source,
        })?;
        artifacts.push(RawArtifact {
            source_id: entry.source_id,
            uri: entry.uri,
            media_kind: MediaKind::new(entry.media_kind),
            body,
            fetched_at,
        });
    }
    Ok(artifacts)
}

/// Reads every `.md`/`.markdown`/`.txt` file below `dir`, sorted by path.
/// `uri` is `file://` plus the path relative to `dir`.
pub fn read_directory(
    dir: &Path,
    source_id: &str,
    fetched_at: DateTime<Utc>,
) -> Result<Vec<RawArtifact>, IngestError> {
    let mut files = Vec::new();
    collect_files(dir, &mut files)?;
    files.sort();
    let mut artifacts = Vec::new();
    for file in files {
        let Some(media_kind) = MediaKind::from_extension(&file) else {
            continue;
        };
        let body = std::fs::read(&file).map_err(|source| IngestError::Io {
            path: file.clone(),
            source,
        })?;
        let rel = file.strip_prefix(dir).unwrap_or(&file);
        artifacts.push(RawArtifact {
            source_id: source_id.to_string(),
            uri: format!("file://{}", rel.to_string_lossy().replace('\\', "/")),
            media_kind,
            body,
            fetched_at,
        });
    }
    Ok(artifacts)
}

fn collect_files(dir: &Path, out: &mut Vec<PathBuf>) -> Result<(), IngestError> {
    let io = |source| IngestError::Io {
        path: dir.to_path_buf(),
        source,
    };
    for entry in std::fs::read_dir(dir).map_err(io)? {
        let entry = entry.map_err(io)?;
        let path = entry.path();
        if entry.file_type().map_err(io)?.is_dir() {
            collect_files(&path, out)?;
        } else {
            out.push(path);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    fn artifact(kind: MediaKind, body: &[u8]) -> RawArtifact {
        RawArtifact {
            source_id: "wiki".into(),
            uri: "mem://wiki/page".into(),
            media_kind: kind,
            body: body.to_vec(),
            fetched_at: Utc.timestamp_millis_opt(1_700_000_000_000).unwrap(),
        }
    }

    #[test]
    fn plain_text_paragraphs() {
        let doc = convert_to_markdown(&artifact(MediaKind::plain_text(), b"hello\n\nworld")).unwrap();
        let sections = parse_sections(&doc);
        let texts: Vec<&str> = sections[0].blocks.iter().map(|b| b.text.as_str()).collect();
        assert_eq!(texts, vec!["hello", "world"]);
        assert!(sections[0].blocks.iter().all(|b| b.kind == BlockKind::Paragraph));
    }

    #[test]
    fn normalized_markdown_is_unchanged() {
        let text = "# Title\n\nSome text.\n\n| a |\n|---|\n| 1 |";
        let doc = convert_to_markdown(&artifact(MediaKind::markdown(), text.as_bytes())).unwrap();
        assert_eq!(doc.text, text);
    }

    #[test]
    fn invalid_utf8_is_a_decode_error() {
        let err = convert_to_markdown(&artifact(MediaKind::markdown(), &[b'a', 0xFF])).unwrap_err();
        assert!(matches!(err, IngestError::Decode { offset: 1, .. }));
    }

    #[test]
    fn unknown_kind_is_unsupported() {
        let err = convert_to_markdown(&artifact(MediaKind::new("textile"), b"h1. x")).unwrap_err();
        assert!(matches!(err, IngestError::UnsupportedFormat { .. }));
    }

    #[test]
    fn registry_accepts_extra_converters() {
        struct Upper;
        impl Converter for Upper {
            fn to_markdown(&self, text: &str) -> String {
                text.to_uppercase()
            }
        }
        let mut registry = ConverterRegistry::default();
        registry.register(MediaKind::new("shout"), Upper);
        let doc = registry.convert(&artifact(MediaKind::new("SHOUT"), b"hi   there")).unwrap();
        assert_eq!(doc.text, "HI THERE");
    }

    #[test]
    fn code_survives_full_ingest_path() {
        let code = "```python\ndef f(x):\n    return  x   # spaced\n\n\n\n```";
        let body = format!("# Doc\n\nIntro   text.\n\n{code}\n");
        let doc = convert_to_markdown(&artifact(MediaKind::markdown(), body.as_bytes())).unwrap();
        let sections = parse_sections(&doc);
        let code_block = sections[0]
            .blocks
            .iter()
            .find(|b| b.kind == BlockKind::Code)
            .unwrap();
        assert_eq!(code_block.text, code);
    }

    #[test]
    fn manifest_and_directory_readers() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.md"), "# A\ntext").unwrap();
        std::fs::create_dir(dir.path().join("sub")).unwrap();
        std::fs::write(dir.path().join("sub/b.txt"), "plain").unwrap();
        std::fs::write(dir.path().join("skip.bin"), [0u8, 1]).unwrap();
        let now = Utc.timestamp_millis_opt(0).unwrap();

        let arts = read_directory(dir.path(), "docs", now).unwrap();
        let uris: Vec<&str> = arts.iter().map(|a| a.uri.as_str()).collect();
        assert_eq!(uris, vec!["file://a.md", "file://sub/b.txt"]);

        let manifest = dir.path().join("manifest.jsonl");
        std::fs::write(
            &manifest,
            r#"{"source_id":"gitlab","uri":"https://git/x","media_kind":"markdown","path":"a.md"}"#,
        )
        .unwrap();
        let arts = read_manifest(&manifest, now).unwrap();
        assert_eq!(arts.len(), 1);
        assert_eq!(arts[0].source_id, "gitlab");
        assert_eq!(arts[0].body, b"# A\ntext");

        std::fs::write(&manifest, "{not json}\n").unwrap();
        assert!(matches!(
            read_manifest(&manifest, now),
            Err(IngestError::Manifest { line: 1, .. })
        ));
    }
}
