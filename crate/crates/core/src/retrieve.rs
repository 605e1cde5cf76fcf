//! Hybrid retrieval: keyword and semantic search side by side, weighted
//! reciprocal-rank fusion, provider reranking and context assembly.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::embed::embed_batch;
use crate::error::{Error, ProviderError, Result};
use crate::index::{top_k, Bm25Params, Index, Modality, Retriever, SearchHit, SharedIndex};
use crate::provider::{ChatMessage, ChatProvider, ChatRequest, EmbeddingProvider, RerankProvider};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionConfig {
    pub w_semantic: f64,
    pub w_keyword: f64,
    pub rrf_k: f64,
    pub prefuse_k: usize,
    pub final_k: usize,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            w_semantic: 0.8,
            w_keyword: 0.2,
            rrf_k: 60.0,
            prefuse_k: 150,
            final_k: 20,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.w_semantic >= 0.0
            && self.w_keyword >= 0.0
            && self.w_semantic + self.w_keyword > 0.0
            && self.rrf_k > 0.0
            && self.final_k >= 1
            && self.final_k <= self.prefuse_k;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("fusion config out of range: {self:?}")))
        }
    }
}

/// `w_sem / (rrf_k + rank_sem) + w_kw / (rrf_k + rank_kw)`, a term only
/// counting when the record is in that list.
pub fn fuse(keyword: &[SearchHit], semantic: &[SearchHit], cfg: &FusionConfig) -> Vec<SearchHit> {
    let mut merged: BTreeMap<&str, (f64, &SearchHit)> = BTreeMap::new();
    for (list, w) in [(semantic, cfg.w_semantic), (keyword, cfg.w_keyword)] {
        for h in list {
            let add = w / (cfg.rrf_k + h.rank as f64);
            merged
                .entry(h.record_id.as_str())
                .and_modify(|e| e.0 += add)
                .or_insert((add, h));
        }
    }
    let scores: Vec<(String, f64)> = merged.iter().map(|(id, (s, _))| (id.to_string(), *s)).collect();
    top_k(scores, cfg.prefuse_k)
        .into_iter()
        .enumerate()
        .map(|(i, (id, score))| {
            let mut h = merged[id.as_str()].1.clone();
            h.score = score;
            h.rank = i + 1;
            h.retriever = Retriever::Fused;
            h
        })
        .collect()
}

/// Reorders `hits` by the provider's ranking and keeps `final_k`. Scores
/// become `1 / position`.
pub fn rerank(
    query: &str,
    hits: &[SearchHit],
    provider: &dyn RerankProvider,
    final_k: usize,
) -> std::result::Result<Vec<SearchHit>, ProviderError> {
    if hits.is_empty() {
        return Ok(Vec::new());
    }
    let docs: Vec<String> = hits.iter().map(|h| h.body.clone()).collect();
    let order = provider.rerank(query, &docs)?;
    let mut seen = vec![false; hits.len()];
    for &i in &order {
        if i >= hits.len() || std::mem::replace(&mut seen[i], true) {
            return Err(ProviderError::new(
                provider.name(),
                format!("invalid rerank order {order:?}"),
            ));
        }
    }
    Ok(order
        .into_iter()
        .take(final_k)
        .enumerate()
        .map(|(pos, i)| {
            let mut h = hits[i].clone();
            h.rank = pos + 1;
            h.score = 1.0 / (pos + 1) as f64;
            h.retriever = Retriever::Reranked;
            h
        })
        .collect())
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SearchOutcome {
    pub hits: Vec<SearchHit>,
    /// Degradations that did not fail the query (e.g. reranker errors).
    pub warnings: Vec<String>,
}

/// Keyword and semantic search run on two threads over the same snapshot;
/// their results are fused and reranked. A reranker failure falls back to
/// the fused order with a warning.
pub fn hybrid_search(
    query: &str,
    index: &Index,
    embedder: &dyn EmbeddingProvider,
    bm25: &Bm25Params,
    cfg: &FusionConfig,
    reranker: &dyn RerankProvider,
) -> Result<SearchOutcome> {
    cfg.validate()?;
    if index.is_empty() || query.trim().is_empty() {
        return Ok(SearchOutcome::default());
    }
    let (keyword, semantic) = std::thread::scope(|s| {
        let kw = s.spawn(|| index.keyword_search(query, cfg.prefuse_k, bm25));
        let sem = embed_batch(&[query.to_string()], embedder, 1)
            .and_then(|mut v| index.semantic_search(&v.remove(0), cfg.prefuse_k));
        (kw.join().expect("keyword search panicked"), sem)
    });
    let fused = fuse(&keyword, &semantic?, cfg);
    let mut warnings = Vec::new();
    let hits = match rerank(query, &fused, reranker, cfg.final_k) {
        Ok(h) => h,
        Err(e) => {
            log::warn!("rerank failed, keeping fused order: {e}");
            warnings.push(format!("rerank failed ({e}); fused order used"));
            fused.into_iter().take(cfg.final_k).collect()
        }
    };
    Ok(SearchOutcome { hits, warnings })
}

/// Everything a query needs: index handle, providers and parameters.
#[derive(Clone)]
pub struct SearchEngine {
    pub index: SharedIndex,
    pub embedder: Arc<dyn EmbeddingProvider>,
    pub reranker: Arc<dyn RerankProvider>,
    pub bm25: Bm25Params,
    pub fusion: FusionConfig,
}

impl SearchEngine {
    pub fn search(&self, query: &str) -> Result<SearchOutcome> {
        self.search_with(query, &self.fusion)
    }

    pub fn search_with(&self, query: &str, fusion: &FusionConfig) -> Result<SearchOutcome> {
        let index = self.index.read();
        hybrid_search(
            query,
            &index,
            self.embedder.as_ref(),
            &self.bm25,
            fusion,
            self.reranker.as_ref(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextEntry {
    pub record_id: String,
    pub doc_id: String,
    pub modality: Modality,
    pub title: String,
    pub body: String,
    pub citation_tag: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_id: Option<String>,
}

impl ContextEntry {
    fn rendered(&self) -> String {
        match &self.image_path {
            Some(p) => format!("{} {}\n(image: {p})", self.citation_tag, self.body),
            None => format!("{} {}", self.citation_tag, self.body),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ContextBlock {
    pub entries: Vec<ContextEntry>,
    pub token_estimate: usize,
}

impl ContextBlock {
    pub fn render(&self) -> String {
        self.entries
            .iter()
            .map(ContextEntry::rendered)
            .collect::<Vec<_>>()
            .join("\n\n")
    }
}

/// Four characters per token, rounded up.
pub fn estimate_tokens(text: &str) -> usize {
    text.chars().count().div_ceil(4)
}

/// Takes hits in rank order until the next one would exceed the budget.
pub fn assemble_context(hits: &[SearchHit], budget_tokens: usize) -> ContextBlock {
    let mut block = ContextBlock::default();
    for h in hits {
        let entry = ContextEntry {
            record_id: h.record_id.clone(),
            doc_id: h.doc_id.clone(),
            modality: h.modality,
            title: h.metadata.title.clone(),
            body: h.body.clone(),
            citation_tag: format!("[{}]", block.entries.len() + 1),
            image_path: match h.modality {
                Modality::Image => h.metadata.image_path.clone(),
                Modality::Text => None,
            },
            image_id: h.metadata.image_id.clone(),
        };
        let cost = estimate_tokens(&entry.body) + entry.image_path.as_deref().map_or(0, estimate_tokens);
        if block.token_estimate + cost > budget_tokens {
            break;
        }
        block.token_estimate += cost;
        block.entries.push(entry);
    }
    block
}

/// Offline answer: the leading text of the first text entries, with their
/// citation tags. Image descriptions are never quoted.
pub fn extractive_answer(block: &ContextBlock, max_entries: usize) -> String {
    let parts: Vec<String> = block
        .entries
        .iter()
        .filter(|e| e.modality == Modality::Text)
        .take(max_entries)
        .map(|e| format!("{} {}", crate::index::snippet(&e.body), e.citation_tag))
        .collect();
    if parts.is_empty() {
        "No relevant information was found in the database.".to_string()
    } else {
        parts.join(" ")
    }
}

/// Single-shot retrieval-augmented answer over an assembled context.
pub fn answer_with_context(question: &str, block: &ContextBlock, llm: &dyn ChatProvider) -> Result<String> {
    let request = ChatRequest::new(vec![
        ChatMessage::system(
            "Answer the question using only the numbered context. Cite entries by their tags, e.g. [2]. Figures are described in text; refer to them by tag.",
        ),
        ChatMessage::user(format!("Context:\n{}\n\nQuestion: {question}", block.render())),
    ])
    .with_fallback(extractive_answer(block, 2));
    Ok(llm.complete(&request)?)
}
