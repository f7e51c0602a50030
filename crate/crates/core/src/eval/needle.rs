//! Synthetic "needle" corpora: filler documents of made-up words, some of
//! which carry one fact about a rare marker term. Each question asks about
//! one marker, so exactly one chunk answers it.
//!
//! Words are picked against the hashing embedder's buckets: every marker
//! owns a bucket no other document word falls into, and filler avoids the
//! buckets of question words. The answer chunk is then the only one with a
//! positive BM25 score and the only one with a positive cosine.

use std::collections::HashSet;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use super::datasets::{parse_squad, Dataset};
use crate::backends::{fnv1a64, HASH_EMBEDDER_DIMENSION};

const SYLLABLES: [&str; 16] = [
    "ka", "lo", "mi", "ru", "sen", "ta", "vo", "ne", "pi", "dra", "gu", "fe", "bo", "xi", "wa", "jul",
];

const QUESTION_WORDS: [&str; 3] = ["what", "about", "?"];
const FACT_WORDS: [&str; 2] = ["is", "."];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NeedleSpec {
    pub documents: usize,
    pub questions: usize,
    pub filler_words: usize,
    pub seed: u64,
}

impl Default for NeedleSpec {
    fn default() -> Self {
        NeedleSpec {
            documents: 100,
            questions: 25,
            filler_words: 40,
            seed: 7,
        }
    }
}

fn bucket(word: &str) -> usize {
    (fnv1a64(word.to_lowercase().as_bytes()) % HASH_EMBEDDER_DIMENSION as u64) as usize
}

/// The corpus in SQuAD v1.1 layout, one paragraph per document.
pub fn needle_squad(spec: &NeedleSpec) -> Value {
    assert!(spec.questions <= spec.documents, "more questions than documents");
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut reserved: HashSet<usize> = QUESTION_WORDS.iter().map(|w| bucket(w)).collect();
    for w in FACT_WORDS {
        assert!(!reserved.contains(&bucket(w)), "`{w}` shares a bucket with a question word");
    }
    reserved.extend(FACT_WORDS.iter().map(|w| bucket(w)));
    let mut markers = Vec::with_capacity(spec.questions);
    while markers.len() < spec.questions {
        let m = format!(
            "zq{}{}{:02}",
            SYLLABLES.choose(&mut rng).unwrap(),
            SYLLABLES.choose(&mut rng).unwrap(),
            markers.len()
        );
        if reserved.insert(bucket(&m)) {
            markers.push(m);
        }
    }
    let question_buckets: HashSet<usize> = QUESTION_WORDS.iter().map(|w| bucket(w)).collect();
    let vocab: Vec<String> = SYLLABLES
        .iter()
        .flat_map(|a| SYLLABLES.iter().map(move |b| format!("{a}{b}")))
        .filter(|w| {
            let b = bucket(w);
            !question_buckets.contains(&b) && !markers.iter().any(|m| bucket(m) == b)
        })
        .collect();
    assert!(vocab.len() >= 16, "filler vocabulary too small");
    let filler = |rng: &mut ChaCha8Rng, n: usize| -> String {
        (0..n).map(|_| vocab.choose(rng).unwrap().as_str()).collect::<Vec<_>>().join(" ")
    };

    let mut needle_docs: Vec<usize> = (0..spec.documents).collect();
    needle_docs.shuffle(&mut rng);
    needle_docs.truncate(spec.questions);

    let half = spec.filler_words / 2;
    let mut paragraphs = Vec::with_capacity(spec.documents);
    for d in 0..spec.documents {
        let head = filler(&mut rng, half);
        let tail = filler(&mut rng, spec.filler_words - half);
        let Some(q) = needle_docs.iter().position(|&n| n == d) else {
            paragraphs.push(json!({"context": format!("{head}. {tail}."), "qas": []}));
            continue;
        };
        let marker = &markers[q];
        let fact = format!("{marker} is {}.", filler(&mut rng, 1));
        paragraphs.push(json!({
            "context": format!("{head}. {fact} {tail}."),
            "qas": [{
                "id": format!("needle-{q:02}"),
                "question": format!("What about {marker}?"),
                "answers": [{"text": fact}]
            }]
        }));
    }
    json!({"version": "1.1", "data": [{"title": "needles", "paragraphs": paragraphs}]})
}

pub fn needle_dataset(spec: &NeedleSpec) -> Dataset {
    parse_squad(&needle_squad(spec).to_string(), "needle", None).expect("generated corpus is valid SQuAD")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::{Embedder, HashingEmbedder};
    use crate::chunker::ChunkLimit;
    use crate::eval::index_corpus;
    use crate::retrieval::{bm25_score, query_terms, Bm25Params};

    #[test]
    fn shape_and_uniqueness() {
        let ds = needle_dataset(&NeedleSpec::default());
        assert_eq!(ds.corpus.len(), 100);
        assert_eq!(ds.examples.len(), 25);
        assert!(ds.warnings.is_empty());
        for ex in &ds.examples {
            let holders = ds
                .corpus
                .iter()
                .filter(|a| String::from_utf8_lossy(&a.body).contains(ex.gold_evidences[0].as_str()))
                .count();
            assert_eq!(holders, 1, "{}", ex.qid);
        }
    }

    #[test]
    fn answer_is_the_only_scoring_chunk() {
        let ds = needle_dataset(&NeedleSpec::default());
        let embedder = HashingEmbedder::default();
        let shard = index_corpus("needle", &ds.corpus, ChunkLimit::default(), &embedder).unwrap();
        for ex in &ds.examples {
            let q = embedder.embed(&ex.question).unwrap();
            let terms = query_terms(&ex.question);
            for c in &shard.chunks {
                let answers = c.chunk.body.contains(ex.gold_evidences[0].as_str());
                let bm25 = bm25_score(&terms, &c.sparse, c.chunk.token_count, &shard.stats, Bm25Params::default());
                let cos = q.dot(&c.dense);
                assert_eq!(bm25 > 0.0, answers, "{} bm25 {bm25}", ex.qid);
                assert_eq!(cos > 1e-9, answers, "{} cosine {cos}", ex.qid);
            }
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let spec = NeedleSpec::default();
        assert_eq!(needle_squad(&spec), needle_squad(&spec));
        assert_ne!(needle_squad(&spec), needle_squad(&NeedleSpec { seed: 8, ..spec }));
    }
}
