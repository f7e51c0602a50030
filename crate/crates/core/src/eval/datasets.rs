//! Loaders for QA datasets: SQuAD v1.1, MultiHopRAG-style query files and
//! MLQA (SQuAD layout with a language pair in the file name).

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::ingest::{MediaKind, RawArtifact};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaExample {
    pub qid: String,
    pub question: String,
    pub gold_evidences: Vec<String>,
    /// `(corpus language, question language)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub language_pair: Option<(String, String)>,
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read dataset {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("dataset schema violation at `{at}`: {message}")]
    Schema { at: String, message: String },
    #[error("unknown dataset kind `{0}` (expected squad, multihop or mlqa)")]
    UnknownKind(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Squad,
    Multihop,
    Mlqa,
}

impl FromStr for DatasetKind {
    type Err = DatasetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "squad" => Ok(DatasetKind::Squad),
            "multihop" => Ok(DatasetKind::Multihop),
            "mlqa" => Ok(DatasetKind::Mlqa),
            _ => Err(DatasetError::UnknownKind(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub corpus: Vec<RawArtifact>,
    pub examples: Vec<QaExample>,
    /// Skipped examples and dropped evidences.
    pub warnings: Vec<String>,
}

/// Artifacts get a fixed timestamp so repeated loads give identical ids.
fn epoch() -> DateTime<Utc> {
    DateTime::<Utc>::UNIX_EPOCH
}

fn content_hash(text: &str) -> String {
    hex::encode(&Sha256::digest(text.as_bytes())[..8])
}

fn read(path: &Path) -> Result<String, DatasetError> {
    std::fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn parse_json<T: serde::de::DeserializeOwned>(text: &str) -> Result<T, DatasetError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| DatasetError::Schema {
        at: e.path().to_string(),
        message: e.inner().to_string(),
    })
}

pub fn load(kind: DatasetKind, path: &Path) -> Result<Dataset, DatasetError> {
    match kind {
        DatasetKind::Squad => load_squad(path),
        DatasetKind::Multihop => load_multihop(path),
        DatasetKind::Mlqa => load_mlqa(path),
    }
}

#[derive(Deserialize)]
struct SquadFile {
    data: Vec<SquadArticle>,
}

#[derive(Deserialize)]
struct SquadArticle {
    #[serde(default)]
    title: String,
    paragraphs: Vec<SquadParagraph>,
}

#[derive(Deserialize)]
struct SquadParagraph {
    context: String,
    qas: Vec<SquadQa>,
}

#[derive(Deserialize)]
struct SquadQa {
    id: String,
    question: String,
    answers: Vec<SquadAnswer>,
}

#[derive(Deserialize)]
struct SquadAnswer {
    text: String,
}

pub fn load_squad(path: &Path) -> Result<Dataset, DatasetError> {
    parse_squad(&read(path)?, "squad", None)
}

/// Each paragraph becomes one plain-text artifact and each question one
/// example whose gold evidences are its distinct answer texts. Answers that
/// do not occur in their paragraph are dropped with a warning.
pub fn parse_squad(text: &str, source_id: &str, language_pair: Option<(String, String)>) -> Result<Dataset, DatasetError> {
    let file: SquadFile = parse_json(text)?;
    let mut out = Dataset::default();
    let mut seen = HashSet::new();
    for (ai, article) in file.data.iter().enumerate() {
        for (pi, paragraph) in article.paragraphs.iter().enumerate() {
            if seen.insert(content_hash(&paragraph.context)) {
                out.corpus.push(RawArtifact {
                    source_id: source_id.to_string(),
                    uri: format!("{source_id}://{ai}/{pi}"),
                    media_kind: MediaKind::plain_text(),
                    body: paragraph.context.clone().into_bytes(),
                    fetched_at: epoch(),
                });
            }
            for qa in &paragraph.qas {
                let mut golds: Vec<String> = Vec::new();
                for a in &qa.answers {
                    if a.text.trim().is_empty() || golds.contains(&a.text) {
                        continue;
                    }
                    if paragraph.context.contains(&a.text) {
                        golds.push(a.text.clone());
                    } else {
                        out.warnings
                            .push(format!("{}: answer {:?} is not in its context; dropped", qa.id, a.text));
                    }
                }
                if golds.is_empty() || qa.question.trim().is_empty() {
                    out.warnings.push(format!("{}: no usable answer or question; skipped", qa.id));
                    continue;
                }
                out.examples.push(QaExample {
                    qid: qa.id.clone(),
                    question: qa.question.clone(),
                    gold_evidences: golds,
                    language_pair: language_pair.clone(),
                });
            }
        }
        if article.paragraphs.is_empty() {
            out.warnings.push(format!("article {ai} ({}) has no paragraphs", article.title));
        }
    }
    Ok(out)
}

/// Reads the language pair from MLQA file names such as
/// `dev-context-de-question-en.json`.
pub fn mlqa_language_pair(path: &Path) -> Option<(String, String)> {
    let stem = path.file_stem()?.to_str()?;
    let parts: Vec<&str> = stem.split('-').collect();
    let c = parts.iter().position(|&p| p == "context")?;
    match (parts.get(c + 1), parts.get(c + 2), parts.get(c + 3)) {
        (Some(corpus), Some(&"question"), Some(question)) => Some((corpus.to_string(), question.to_string())),
        _ => None,
    }
}

pub fn load_mlqa(path: &Path) -> Result<Dataset, DatasetError> {
    parse_squad(&read(path)?, "mlqa", mlqa_language_pair(path))
}

#[derive(Deserialize)]
struct MultihopWithCorpus {
    #[serde(default)]
    corpus: Vec<MultihopDoc>,
    queries: Vec<MultihopQuery>,
}

#[derive(Deserialize)]
struct MultihopDoc {
    #[serde(default)]
    title: String,
    #[serde(default)]
    url: String,
    body: String,
}

#[derive(Deserialize)]
struct MultihopQuery {
    #[serde(default)]
    id: Option<String>,
    query: String,
    evidence_list: Vec<MultihopEvidence>,
}

#[derive(Deserialize)]
struct MultihopEvidence {
    #[serde(default)]
    title: String,
    #[serde(default)]
    url: String,
    fact: String,
    /// Full text of the evidence's source document.
    #[serde(default)]
    body: Option<String>,
}

pub fn load_multihop(path: &Path) -> Result<Dataset, DatasetError> {
    parse_multihop(&read(path)?)
}

/// Source documents come from an evidence's `body`, else from the `corpus`
/// entry with the same url or title, else the fact itself. The corpus is
/// deduplicated by content hash. Queries without evidence are skipped.
pub fn parse_multihop(text: &str) -> Result<Dataset, DatasetError> {
    let (corpus, queries) = if text.trim_start().starts_with('[') {
        (Vec::new(), parse_json::<Vec<MultihopQuery>>(text)?)
    } else {
        let file: MultihopWithCorpus = parse_json(text)?;
        (file.corpus, file.queries)
    };
    let mut out = Dataset::default();
    let mut seen = HashSet::new();
    for (qi, q) in queries.iter().enumerate() {
        let qid = q.id.clone().unwrap_or_else(|| format!("multihop-{qi}"));
        if q.evidence_list.is_empty() {
            out.warnings.push(format!("{qid}: empty evidence_list; skipped"));
            continue;
        }
        let mut golds = Vec::new();
        for ev in &q.evidence_list {
            let doc = ev.body.as_deref().or_else(|| {
                corpus
                    .iter()
                    .find(|d| (!ev.url.is_empty() && d.url == ev.url) || (!ev.title.is_empty() && d.title == ev.title))
                    .map(|d| d.body.as_str())
            });
            let doc = doc.unwrap_or(&ev.fact);
            let hash = content_hash(doc);
            if seen.insert(hash.clone()) {
                let body = if ev.title.is_empty() || doc.starts_with('#') {
                    doc.to_string()
                } else {
                    format!("# {}\n\n{doc}", ev.title)
                };
                out.corpus.push(RawArtifact {
                    source_id: "multihop".into(),
                    uri: format!("multihop://{hash}"),
                    media_kind: MediaKind::markdown(),
                    body: body.into_bytes(),
                    fetched_at: epoch(),
                });
            }
            if !ev.fact.trim().is_empty() && !golds.contains(&ev.fact) {
                golds.push(ev.fact.clone());
            }
        }
        if golds.is_empty() || q.query.trim().is_empty() {
            out.warnings.push(format!("{qid}: no usable evidence or question; skipped"));
            continue;
        }
        out.examples.push(QaExample {
            qid,
            question: q.query.clone(),
            gold_evidences: golds,
            language_pair: None,
        });
    }
    Ok(out)
}
