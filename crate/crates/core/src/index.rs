//! Unified record store: BM25 inverted index plus flat vector store over the
//! same records, with a checksummed single-file format.
//!
//! File layout (all integers little-endian):
//!
//! ```text
//! offset  size  field
//! 0       4     magic "MUIX"
//! 4       4     u32 format version (1)
//! 8       4     u32 vector dimension (0 = no records yet)
//! 12      8     u64 record count
//! 20      8     u64 payload length in bytes
//! 28      32    SHA-256 of the payload
//! 60      ...   payload: one JSON record per line (record_id order), then
//!               one {"term","postings":[[record_id,tf],...]} line per term
//! ```
//!
//! A zero-byte file is an empty index. Postings are rebuilt from the records
//! on load and must agree with the stored ones.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::Path;
use std::sync::Arc;

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::embed::Vector;
use crate::error::{io, Error, Result};

pub const MAGIC: &[u8; 4] = b"MUIX";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Text,
    Image,
}

impl Modality {
    pub fn as_str(&self) -> &'static str {
        match self {
            Modality::Text => "text",
            Modality::Image => "image",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RecordMetadata {
    pub title: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub page_no: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub char_span: Option<(usize, usize)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ordinal: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexRecord {
    pub record_id: String,
    pub doc_id: String,
    pub modality: Modality,
    pub body: String,
    pub vector: Vector,
    pub metadata: RecordMetadata,
}

impl IndexRecord {
    pub fn validate(&self) -> Result<()> {
        if self.record_id.is_empty() {
            return Err(Error::MissingField("record_id".into()));
        }
        if self.body.trim().is_empty() {
            return Err(Error::InvalidField {
                field: format!("{}.body", self.record_id),
                reason: "empty body".into(),
            });
        }
        if self.modality == Modality::Image && self.metadata.image_path.as_deref().is_none_or(|p| p.is_empty()) {
            return Err(Error::MissingField(format!("{}.metadata.image_path", self.record_id)));
        }
        if self.vector.dim() == 0 {
            return Err(Error::InvalidField {
                field: format!("{}.vector", self.record_id),
                reason: "empty vector".into(),
            });
        }
        Ok(())
    }
}

pub fn text_record_id(doc_id: &str, ordinal: usize) -> String {
    format!("{doc_id}#c{ordinal}")
}

pub fn image_record_id(doc_id: &str, image_id: &str) -> String {
    format!("{doc_id}#img:{image_id}")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.2, b: 0.75 }
    }
}

impl Bm25Params {
    pub fn validate(&self) -> Result<()> {
        if self.k1.is_nan() || self.k1 <= 0.0 || !(0.0..=1.0).contains(&self.b) {
            return Err(Error::InvalidConfig(format!(
                "bm25 needs k1 > 0 and 0 <= b <= 1, got {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Retriever {
    Keyword,
    Semantic,
    Fused,
    Reranked,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchHit {
    pub record_id: String,
    pub doc_id: String,
    pub modality: Modality,
    pub score: f64,
    pub rank: usize,
    pub retriever: Retriever,
    pub snippet: String,
    pub body: String,
    pub metadata: RecordMetadata,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestStats {
    pub added: usize,
    pub replaced: usize,
    pub total: usize,
}

/// Lowercase, split on anything that is not alphanumeric, keep tokens of
/// two or more characters.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| t.chars().count() >= 2)
        .map(|t| t.to_lowercase())
        .collect()
}

pub const SNIPPET_CHARS: usize = 240;

pub fn snippet(body: &str) -> String {
    let flat: String = body.split_whitespace().collect::<Vec<_>>().join(" ");
    if flat.chars().count() <= SNIPPET_CHARS {
        flat
    } else {
        let mut s: String = flat.chars().take(SNIPPET_CHARS).collect();
        s.push('…');
        s
    }
}

#[derive(Debug, Clone)]
struct Entry {
    record: IndexRecord,
    len: usize,
}

#[derive(Debug, Clone, Default)]
pub struct Index {
    dim: Option<usize>,
    entries: BTreeMap<String, Entry>,
    postings: BTreeMap<String, BTreeMap<String, u32>>,
    total_len: usize,
}

pub type SharedIndex = Arc<RwLock<Index>>;

impl Index {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn into_shared(self) -> SharedIndex {
        Arc::new(RwLock::new(self))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn dim(&self) -> Option<usize> {
        self.dim
    }

    pub fn get(&self, record_id: &str) -> Option<&IndexRecord> {
        self.entries.get(record_id).map(|e| &e.record)
    }

    pub fn records(&self) -> impl Iterator<Item = &IndexRecord> {
        self.entries.values().map(|e| &e.record)
    }

    pub fn doc_frequency(&self, term: &str) -> usize {
        self.postings.get(term).map_or(0, |p| p.len())
    }

    /// Distinct documents as (doc_id, title), ordered by doc_id.
    pub fn documents(&self) -> Vec<(String, String)> {
        let mut docs: BTreeMap<&str, &str> = BTreeMap::new();
        for e in self.entries.values() {
            docs.entry(&e.record.doc_id).or_insert(&e.record.metadata.title);
        }
        docs.into_iter().map(|(d, t)| (d.to_string(), t.to_string())).collect()
    }

    /// Inserts or replaces records. The whole batch is validated first, so
    /// a failing batch leaves the index untouched.
    pub fn upsert(&mut self, records: Vec<IndexRecord>) -> Result<IngestStats> {
        let mut dim = self.dim;
        for r in &records {
            r.validate()?;
            match dim {
                Some(d) if d != r.vector.dim() => {
                    return Err(Error::DimMismatch {
                        expected: d,
                        got: r.vector.dim(),
                    })
                }
                None => dim = Some(r.vector.dim()),
                _ => {}
            }
        }
        self.dim = dim;
        let mut stats = IngestStats::default();
        for r in records {
            if self.remove(&r.record_id) {
                stats.replaced += 1;
            } else {
                stats.added += 1;
            }
            self.insert(r);
        }
        stats.total = self.len();
        Ok(stats)
    }

    fn insert(&mut self, record: IndexRecord) {
        let tokens = tokenize(&record.body);
        let mut tf: BTreeMap<String, u32> = BTreeMap::new();
        for t in &tokens {
            *tf.entry(t.clone()).or_insert(0) += 1;
        }
        for (term, n) in tf {
            self.postings
                .entry(term)
                .or_default()
                .insert(record.record_id.clone(), n);
        }
        self.total_len += tokens.len();
        self.entries.insert(
            record.record_id.clone(),
            Entry {
                record,
                len: tokens.len(),
            },
        );
    }

    fn remove(&mut self, record_id: &str) -> bool {
        let Some(old) = self.entries.remove(record_id) else {
            return false;
        };
        self.total_len -= old.len;
        for term in tokenize(&old.record.body) {
            if let Some(p) = self.postings.get_mut(&term) {
                p.remove(record_id);
                if p.is_empty() {
                    self.postings.remove(&term);
                }
            }
        }
        true
    }

    /// Drops every record of `doc_id`; returns how many went.
    pub fn remove_document(&mut self, doc_id: &str) -> usize {
        let ids: Vec<String> = self
            .entries
            .values()
            .filter(|e| e.record.doc_id == doc_id)
            .map(|e| e.record.record_id.clone())
            .collect();
        self.remove_records(&ids)
    }

    pub fn remove_records(&mut self, record_ids: &[String]) -> usize {
        record_ids.iter().filter(|id| self.remove(id)).count()
    }

    fn hit(&self, record_id: &str, score: f64, retriever: Retriever) -> SearchHit {
        let r = &self.entries[record_id].record;
        SearchHit {
            record_id: r.record_id.clone(),
            doc_id: r.doc_id.clone(),
            modality: r.modality,
            score,
            rank: 0,
            retriever,
            snippet: snippet(&r.body),
            body: r.body.clone(),
            metadata: r.metadata.clone(),
        }
    }

    /// BM25 over distinct query terms with
    /// `idf = ln(1 + (N - df + 0.5) / (df + 0.5))`.
    pub fn keyword_search(&self, query: &str, k: usize, params: &Bm25Params) -> Vec<SearchHit> {
        let mut terms = tokenize(query);
        terms.sort();
        terms.dedup();
        if terms.is_empty() || self.entries.is_empty() || k == 0 {
            return Vec::new();
        }
        let n = self.entries.len() as f64;
        let avgdl = self.total_len as f64 / n;
        let mut scores: BTreeMap<&str, f64> = BTreeMap::new();
        for term in &terms {
            let Some(post) = self.postings.get(term) else {
                continue;
            };
            let df = post.len() as f64;
            let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
            for (rid, &tf) in post {
                let dl = self.entries[rid].len as f64;
                let tf = f64::from(tf);
                let norm = if avgdl > 0.0 { dl / avgdl } else { 0.0 };
                let s = idf * tf * (params.k1 + 1.0) / (tf + params.k1 * (1.0 - params.b + params.b * norm));
                *scores.entry(rid.as_str()).or_insert(0.0) += s;
            }
        }
        let ranked = top_k(scores.into_iter().map(|(id, s)| (id.to_string(), s)).collect(), k);
        self.to_hits(ranked, Retriever::Keyword)
    }

    /// Exact top-k by cosine (dot product of unit vectors).
    pub fn semantic_search(&self, query: &Vector, k: usize) -> Result<Vec<SearchHit>> {
        let Some(dim) = self.dim else {
            return Ok(Vec::new());
        };
        if query.dim() != dim {
            return Err(Error::DimMismatch {
                expected: dim,
                got: query.dim(),
            });
        }
        let mut scored = Vec::with_capacity(self.entries.len());
        for (id, e) in &self.entries {
            scored.push((id.clone(), e.record.vector.dot(query)?));
        }
        Ok(self.to_hits(top_k(scored, k), Retriever::Semantic))
    }

    fn to_hits(&self, ranked: Vec<(String, f64)>, retriever: Retriever) -> Vec<SearchHit> {
        ranked
            .into_iter()
            .enumerate()
            .map(|(i, (id, s))| {
                let mut h = self.hit(&id, s, retriever);
                h.rank = i + 1;
                h
            })
            .collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = self.to_bytes()?;
        let dir = path
            .parent()
            .filter(|d| !d.as_os_str().is_empty())
            .unwrap_or(Path::new("."));
        std::fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
        let tmp = dir.join(format!(
            ".{}.tmp-{}",
            path.file_name().and_then(|s| s.to_str()).unwrap_or("index"),
            std::process::id()
        ));
        let mut f = std::fs::File::create(&tmp).map_err(|e| io(&tmp, e))?;
        f.write_all(&bytes)
            .and_then(|_| f.sync_all())
            .map_err(|e| io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Index> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut payload = Vec::new();
        for e in self.entries.values() {
            serde_json::to_writer(&mut payload, &e.record)?;
            payload.push(b'\n');
        }
        for (term, post) in &self.postings {
            let line = PostingLine {
                term: term.clone(),
                postings: post.iter().map(|(id, tf)| (id.clone(), *tf)).collect(),
            };
            serde_json::to_writer(&mut payload, &line)?;
            payload.push(b'\n');
        }
        let mut out = Vec::with_capacity(HEADER_LEN + payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dim.unwrap_or(0) as u32).to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u64).to_le_bytes());
        out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
        out.extend_from_slice(&Sha256::digest(&payload));
        out.extend_from_slice(&payload);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Index> {
        if bytes.is_empty() {
            return Ok(Index::new());
        }
        let corrupt = |m: &str| Error::CorruptIndex(m.to_string());
        if bytes.len() < HEADER_LEN {
            return Err(corrupt("truncated header"));
        }
        if &bytes[0..4] != MAGIC {
            return Err(corrupt("bad magic"));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
        let version = u32_at(4);
        if version != FORMAT_VERSION {
            return Err(Error::CorruptIndex(format!("unsupported version {version}")));
        }
        let dim = u32_at(8) as usize;
        let count = u64_at(12) as usize;
        let payload_len = u64_at(20) as usize;
        let payload = &bytes[HEADER_LEN..];
        if payload.len() != payload_len {
            return Err(Error::CorruptIndex(format!(
                "payload is {} bytes, header says {payload_len}",
                payload.len()
            )));
        }
        if Sha256::digest(payload).as_slice() != &bytes[28..60] {
            return Err(corrupt("checksum mismatch"));
        }
        let text = std::str::from_utf8(payload).map_err(|_| corrupt("payload is not UTF-8"))?;
        let mut lines = text.lines();
        let mut idx = Index::new();
        let mut records = Vec::with_capacity(count);
        for i in 0..count {
            let line = lines
                .next()
                .ok_or_else(|| Error::CorruptIndex(format!("record {i} missing")))?;
            let r: IndexRecord =
                serde_json::from_str(line).map_err(|e| Error::CorruptIndex(format!("record {i}: {e}")))?;
            records.push(r);
        }
        idx.upsert(records).map_err(|e| Error::CorruptIndex(e.to_string()))?;
        if idx.len() != count {
            return Err(corrupt("duplicate record ids"));
        }
        if count > 0 && idx.dim != Some(dim) {
            return Err(corrupt("dimension does not match records"));
        }
        let mut stored: BTreeMap<String, BTreeMap<String, u32>> = BTreeMap::new();
        for line in lines {
            let p: PostingLine =
                serde_json::from_str(line).map_err(|e| Error::CorruptIndex(format!("postings: {e}")))?;
            stored.insert(p.term, p.postings.into_iter().collect());
        }
        if stored != idx.postings {
            return Err(corrupt("postings disagree with records"));
        }
        Ok(idx)
    }
}

#[derive(Serialize, Deserialize)]
struct PostingLine {
    term: String,
    postings: Vec<(String, u32)>,
}

/// Sorts by score descending then id ascending and keeps `k`.
pub fn top_k(mut scored: Vec<(String, f64)>, k: usize) -> Vec<(String, f64)> {
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    scored.truncate(k);
    scored
}
