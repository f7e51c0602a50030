//! Retrieval metrics over ranked passages.
//!
//! A passage is relevant when it contains a gold evidence after both are
//! lowercased and their whitespace runs collapsed to single spaces.

use serde::{Deserialize, Serialize};

/// Lowercases `text` and collapses whitespace runs to one space.
pub fn normalize_text(text: &str) -> String {
    text.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

fn normalized_golds<G: AsRef<str>>(golds: &[G]) -> Vec<String> {
    golds
        .iter()
        .map(|g| normalize_text(g.as_ref()))
        .filter(|g| !g.is_empty())
        .collect()
}

fn top_k<P: AsRef<str>>(retrieved: &[P], k: usize) -> Vec<String> {
    retrieved.iter().take(k).map(|p| normalize_text(p.as_ref())).collect()
}

/// Relevance flags of the first `k` passages.
pub fn relevance_at_k<P: AsRef<str>, G: AsRef<str>>(retrieved: &[P], golds: &[G], k: usize) -> Vec<bool> {
    let golds = normalized_golds(golds);
    top_k(retrieved, k)
        .iter()
        .map(|p| golds.iter().any(|g| p.contains(g.as_str())))
        .collect()
}

/// Mean of precision@i over the relevant ranks i ≤ k; 0 without any
/// relevant passage.
pub fn context_precision_at_k<P: AsRef<str>, G: AsRef<str>>(retrieved: &[P], golds: &[G], k: usize) -> f64 {
    let rel = relevance_at_k(retrieved, golds, k);
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, &r) in rel.iter().enumerate() {
        if r {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    if hits == 0 {
        0.0
    } else {
        sum / hits as f64
    }
}

/// Fraction of gold evidences contained in some passage of the top `k`.
pub fn context_recall_at_k<P: AsRef<str>, G: AsRef<str>>(retrieved: &[P], golds: &[G], k: usize) -> f64 {
    let golds = normalized_golds(golds);
    if golds.is_empty() {
        return 0.0;
    }
    let passages = top_k(retrieved, k);
    let covered = golds
        .iter()
        .filter(|g| passages.iter().any(|p| p.contains(g.as_str())))
        .count();
    covered as f64 / golds.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HitsMode {
    /// 1 when any gold evidence is covered.
    #[default]
    Any,
    /// The covered fraction of gold evidences.
    Fraction,
}

pub fn hits_at_k<P: AsRef<str>, G: AsRef<str>>(retrieved: &[P], golds: &[G], k: usize, mode: HitsMode) -> f64 {
    let recall = context_recall_at_k(retrieved, golds, k);
    match mode {
        HitsMode::Fraction => recall,
        HitsMode::Any if recall > 0.0 => 1.0,
        HitsMode::Any => 0.0,
    }
}
