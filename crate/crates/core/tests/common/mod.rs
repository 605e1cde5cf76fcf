#![allow(dead_code)]

use std::path::PathBuf;

use muallm_core::fetch::{Fetcher, LocalFixtureFetcher};
use muallm_core::runtime::Runtime;

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .canonicalize()
        .expect("fixtures directory")
}

/// Offline runtime over the six-paper corpus, fetching from the fixture
/// directory into `download_dir`.
pub fn corpus_runtime(download_dir: &std::path::Path) -> Runtime {
    let rt = Runtime::offline().with_fetcher(Fetcher::new(
        Box::new(LocalFixtureFetcher::new(fixtures().join("fetch"))),
        download_dir,
    ));
    rt.ingest_dir(fixtures().join("corpus"))
        .expect("fixture corpus ingests");
    rt
}

use std::collections::{BTreeMap, HashMap};

use muallm_core::embed::{HashEmbedder, Vector};
use muallm_core::index::{IndexRecord, Modality, RecordMetadata};

/// A text record embedded with the fallback embedder.
pub fn text_record(record_id: &str, doc_id: &str, body: &str) -> IndexRecord {
    IndexRecord {
        record_id: record_id.into(),
        doc_id: doc_id.into(),
        modality: Modality::Text,
        body: body.into(),
        vector: Vector(HashEmbedder::default().embed_one(body))
            .normalized()
            .expect("non-zero embedding"),
        metadata: RecordMetadata {
            title: format!("Title of {doc_id}"),
            ..Default::default()
        },
    }
}

/// Okapi BM25 written out term by term: lowercase, split on anything that
/// is not a letter or digit, drop one-character tokens;
/// idf = ln(1 + (N - df + 0.5) / (df + 0.5)).
pub fn bm25_oracle(docs: &[(&str, &str)], query: &str, k1: f64, b: f64) -> BTreeMap<String, f64> {
    fn toks(s: &str) -> Vec<String> {
        let lower = s.to_lowercase();
        let mut out = Vec::new();
        let mut cur = String::new();
        for c in lower.chars() {
            if c.is_alphanumeric() {
                cur.push(c);
            } else {
                if cur.chars().count() >= 2 {
                    out.push(cur.clone());
                }
                cur.clear();
            }
        }
        if cur.chars().count() >= 2 {
            out.push(cur);
        }
        out
    }
    let tokenized: Vec<(String, Vec<String>)> = docs.iter().map(|(id, t)| (id.to_string(), toks(t))).collect();
    let n = tokenized.len() as f64;
    let avgdl = tokenized.iter().map(|(_, t)| t.len() as f64).sum::<f64>() / n;
    let mut q = toks(query);
    q.sort();
    q.dedup();
    let mut scores = BTreeMap::new();
    for (id, terms) in &tokenized {
        let dl = terms.len() as f64;
        let mut score = 0.0;
        let mut matched = false;
        for term in &q {
            let tf = terms.iter().filter(|t| *t == term).count() as f64;
            if tf == 0.0 {
                continue;
            }
            matched = true;
            let df = tokenized.iter().filter(|(_, ts)| ts.contains(term)).count() as f64;
            let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
            score += idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * dl / avgdl));
        }
        if matched {
            scores.insert(id.clone(), score);
        }
    }
    scores
}

/// Weighted reciprocal-rank fusion over 1-based ranks, ordered by score
/// descending then id ascending.
pub fn rrf_oracle(semantic: &[String], keyword: &[String], w_sem: f64, w_kw: f64, k: f64) -> Vec<(String, f64)> {
    let mut s: HashMap<String, f64> = HashMap::new();
    for (i, id) in semantic.iter().enumerate() {
        *s.entry(id.clone()).or_default() += w_sem / (k + (i + 1) as f64);
    }
    for (i, id) in keyword.iter().enumerate() {
        *s.entry(id.clone()).or_default() += w_kw / (k + (i + 1) as f64);
    }
    let mut out: Vec<(String, f64)> = s.into_iter().collect();
    out.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
    out
}
