//! Bundle → records → index, as one all-or-nothing update.

use std::collections::HashSet;
use std::path::PathBuf;
use std::sync::Arc;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::corpus::{chunk_document, contextualize, describe_image, ChunkConfig, ContextCache, DocumentBundle};
use crate::embed::embed_batch;
use crate::error::{Error, Result};
use crate::index::{image_record_id, text_record_id, IndexRecord, IngestStats, Modality, RecordMetadata, SharedIndex};
use crate::provider::{ChatProvider, EmbeddingProvider};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub doc_id: String,
    pub text_records: usize,
    pub image_records: usize,
    pub stats: IngestStats,
}

impl IngestReport {
    pub fn summary(&self) -> String {
        fn plural(n: usize, what: &str) -> String {
            format!("{n} {what} record{}", if n == 1 { "" } else { "s" })
        }
        format!(
            "added {}, {} for {} (new {}, replaced {}, index total {})",
            plural(self.text_records, "text"),
            plural(self.image_records, "image"),
            self.doc_id,
            self.stats.added,
            self.stats.replaced,
            self.stats.total
        )
    }
}

pub struct IngestPipeline {
    pub index: SharedIndex,
    pub embedder: Arc<dyn EmbeddingProvider>,
    pub chat: Arc<dyn ChatProvider>,
    pub cache: Arc<ContextCache>,
    pub chunking: ChunkConfig,
    pub prompt_version: String,
    pub batch_size: usize,
    /// Where to save the index after each successful ingest.
    pub persist_path: Option<PathBuf>,
    writer: Mutex<()>,
}

impl IngestPipeline {
    pub fn new(
        index: SharedIndex,
        embedder: Arc<dyn EmbeddingProvider>,
        chat: Arc<dyn ChatProvider>,
        cache: Arc<ContextCache>,
    ) -> Self {
        Self {
            index,
            embedder,
            chat,
            cache,
            chunking: ChunkConfig::default(),
            prompt_version: crate::corpus::DEFAULT_PROMPT_VERSION.to_string(),
            batch_size: 32,
            persist_path: None,
            writer: Mutex::new(()),
        }
    }

    /// Contextualized chunks and image descriptions, embedded. Nothing is
    /// written to the index.
    pub fn build_records(&self, bundle: &DocumentBundle) -> Result<Vec<IndexRecord>> {
        let chunks = chunk_document(bundle, &self.chunking)?;
        let mut records = Vec::new();
        let mut texts = Vec::new();
        for (i, chunk) in chunks.iter().enumerate() {
            let prev = i.checked_sub(1).map(|j| &chunks[j]);
            let cc = contextualize(
                chunk,
                prev,
                bundle,
                self.chat.as_ref(),
                &self.cache,
                &self.prompt_version,
            )?;
            let body = cc.indexed_text();
            texts.push(body.clone());
            records.push(IndexRecord {
                record_id: text_record_id(&bundle.doc_id, chunk.ordinal),
                doc_id: bundle.doc_id.clone(),
                modality: Modality::Text,
                body,
                vector: Default::default(),
                metadata: RecordMetadata {
                    title: bundle.title.clone(),
                    page_no: Some(bundle.page_of(chunk.char_span.0 + chunk.overlap_prefix_len)),
                    char_span: Some(chunk.char_span),
                    ordinal: Some(chunk.ordinal),
                    ..Default::default()
                },
            });
        }
        for asset in &bundle.images {
            let desc = describe_image(asset, bundle, self.chat.as_ref())?;
            let body = desc.indexed_text(&bundle.title);
            texts.push(body.clone());
            records.push(IndexRecord {
                record_id: image_record_id(&bundle.doc_id, &asset.image_id),
                doc_id: bundle.doc_id.clone(),
                modality: Modality::Image,
                body,
                vector: Default::default(),
                metadata: RecordMetadata {
                    title: bundle.title.clone(),
                    page_no: Some(asset.page_no),
                    image_path: Some(asset.path.to_string_lossy().into_owned()),
                    image_id: Some(asset.image_id.clone()),
                    ..Default::default()
                },
            });
        }
        let vectors = embed_batch(&texts, self.embedder.as_ref(), self.batch_size)?;
        for (r, v) in records.iter_mut().zip(vectors) {
            r.vector = v;
        }
        Ok(records)
    }

    /// Blocks until the writer role is free.
    pub fn ingest(&self, bundle: &DocumentBundle) -> Result<IngestReport> {
        let _writer = self.writer.lock();
        self.ingest_locked(bundle)
    }

    /// Fails with [`Error::WriterBusy`] instead of waiting.
    pub fn try_ingest(&self, bundle: &DocumentBundle) -> Result<IngestReport> {
        let _writer = self.writer.try_lock().ok_or(Error::WriterBusy)?;
        self.ingest_locked(bundle)
    }

    pub fn is_busy(&self) -> bool {
        self.writer.is_locked()
    }

    fn ingest_locked(&self, bundle: &DocumentBundle) -> Result<IngestReport> {
        let records = self.build_records(bundle)?;
        let text_records = records.iter().filter(|r| r.modality == Modality::Text).count();
        let image_records = records.len() - text_records;
        let stats = {
            let mut index = self.index.write();
            // records from an earlier version of this document that are gone now
            let keep: HashSet<&str> = records.iter().map(|r| r.record_id.as_str()).collect();
            let stale: Vec<String> = index
                .records()
                .filter(|r| r.doc_id == bundle.doc_id && !keep.contains(r.record_id.as_str()))
                .map(|r| r.record_id.clone())
                .collect();
            if stale.is_empty() {
                index.upsert(records)?
            } else {
                let mut staged = index.clone();
                staged.remove_records(&stale);
                let stats = staged.upsert(records)?;
                *index = staged;
                stats
            }
        };
        if let Some(path) = &self.persist_path {
            self.index.read().save(path)?;
        }
        Ok(IngestReport {
            doc_id: bundle.doc_id.clone(),
            text_records,
            image_records,
            stats,
        })
    }
}
