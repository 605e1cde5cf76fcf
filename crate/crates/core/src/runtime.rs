//! Wiring of index, providers, ingest, fetch and tools into one handle.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::corpus::{load_bundle, ContextCache};
use crate::embed::HashEmbedder;
use crate::error::{io, Error, Result};
use crate::fetch::Fetcher;
use crate::index::{Bm25Params, Index, SharedIndex};
use crate::ingest::{IngestPipeline, IngestReport};
use crate::provider::{ChatProvider, EmbeddingProvider, FallbackChat, IdentityReranker, RerankProvider};
use crate::retrieve::{FusionConfig, SearchEngine};
use crate::tools::ToolContext;

#[derive(Clone)]
pub struct Providers {
    pub chat: Arc<dyn ChatProvider>,
    pub embedder: Arc<dyn EmbeddingProvider>,
    pub reranker: Arc<dyn RerankProvider>,
}

impl Providers {
    /// Fallback chat, hash embedder, identity reranker: no network, no keys.
    pub fn offline() -> Self {
        Self {
            chat: Arc::new(FallbackChat),
            embedder: Arc::new(HashEmbedder::default()),
            reranker: Arc::new(IdentityReranker),
        }
    }
}

#[derive(Clone)]
pub struct Runtime {
    pub index: SharedIndex,
    pub providers: Providers,
    pub engine: SearchEngine,
    pub ingest: Arc<IngestPipeline>,
    pub fetcher: Option<Arc<Fetcher>>,
}

impl Runtime {
    pub fn new(index: Index, providers: Providers, cache: Arc<ContextCache>) -> Result<Self> {
        if let Some(dim) = index.dim() {
            if dim != providers.embedder.dim() {
                return Err(Error::DimMismatch {
                    expected: dim,
                    got: providers.embedder.dim(),
                });
            }
        }
        let index = index.into_shared();
        let engine = SearchEngine {
            index: index.clone(),
            embedder: providers.embedder.clone(),
            reranker: providers.reranker.clone(),
            bm25: Bm25Params::default(),
            fusion: FusionConfig::default(),
        };
        let ingest = Arc::new(IngestPipeline::new(
            index.clone(),
            providers.embedder.clone(),
            providers.chat.clone(),
            cache,
        ));
        Ok(Self {
            index,
            providers,
            engine,
            ingest,
            fetcher: None,
        })
    }

    /// Empty in-memory index with offline providers.
    pub fn offline() -> Self {
        Self::new(Index::new(), Providers::offline(), Arc::new(ContextCache::in_memory()))
            .expect("empty index accepts any dimension")
    }

    pub fn with_fetcher(mut self, fetcher: Fetcher) -> Self {
        self.fetcher = Some(Arc::new(fetcher));
        self
    }

    /// Saves the index to `path` after every ingest.
    pub fn persist_to(mut self, path: impl Into<PathBuf>) -> Self {
        let mut pipeline = IngestPipeline::new(
            self.index.clone(),
            self.providers.embedder.clone(),
            self.providers.chat.clone(),
            self.ingest.cache.clone(),
        );
        pipeline.chunking = self.ingest.chunking;
        pipeline.persist_path = Some(path.into());
        self.ingest = Arc::new(pipeline);
        self
    }

    pub fn ingest_manifest(&self, manifest: impl AsRef<Path>) -> Result<IngestReport> {
        self.ingest.ingest(&load_bundle(manifest)?)
    }

    /// Ingests every `<dir>/*/manifest.json`, in directory-name order.
    pub fn ingest_dir(&self, dir: impl AsRef<Path>) -> Result<Vec<IngestReport>> {
        let dir = dir.as_ref();
        let mut manifests: Vec<PathBuf> = std::fs::read_dir(dir)
            .map_err(|e| io(dir, e))?
            .filter_map(|e| e.ok())
            .map(|e| e.path().join("manifest.json"))
            .filter(|p| p.is_file())
            .collect();
        manifests.sort();
        manifests.iter().map(|m| self.ingest_manifest(m)).collect()
    }

    pub fn tools(&self) -> ToolContext {
        let mut ctx = ToolContext::new(self.engine.clone());
        ctx.ingest = Some(self.ingest.clone());
        ctx.fetcher = self.fetcher.clone();
        ctx
    }
}
