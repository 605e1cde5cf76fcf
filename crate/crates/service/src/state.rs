//! Turns a [`ServiceConfig`] into live providers, a runtime and the shared
//! state behind the HTTP routes.

use std::path::PathBuf;
use std::sync::Arc;

use muallm_core::agent::{Limits, Transcript};
use muallm_core::corpus::ContextCache;
use muallm_core::embed::{HashEmbedder, FALLBACK_SEED};
use muallm_core::fetch::{CommandExtractor, Fetcher, HttpFetcher, LocalFixtureFetcher, DEFAULT_ARXIV_TEMPLATE};
use muallm_core::index::Index;
use muallm_core::netlist::{DetectionsFile, DetectorProvider, StaticDetector};
use muallm_core::provider::{
    ChatProvider, FallbackChat, IdentityReranker, RemoteChat, RemoteDetector, RemoteEmbedder, RemoteReranker,
    ScriptedChat,
};
use muallm_core::runtime::{Providers, Runtime};
use muallm_core::tools::ToolContext;

use crate::config::{ProviderMode, ServiceConfig};

/// Where agent sessions get their chat model. A script is re-read for
/// every session so each one replays it from the first turn.
#[derive(Clone)]
pub enum ChatSource {
    Shared(Arc<dyn ChatProvider>),
    Script(PathBuf),
}

impl ChatSource {
    pub fn session_chat(&self) -> muallm_core::Result<Arc<dyn ChatProvider>> {
        match self {
            ChatSource::Shared(c) => Ok(c.clone()),
            ChatSource::Script(path) => Ok(Arc::new(ScriptedChat::from_file(path)?)),
        }
    }
}

pub fn build_providers(cfg: &ServiceConfig) -> muallm_core::Result<Providers> {
    let chat: Arc<dyn ChatProvider> = match cfg.chat.mode {
        ProviderMode::Remote => Arc::new(RemoteChat::new(&cfg.chat.remote_config())?),
        // a scripted model only drives agent sessions; ingest uses the fallback
        ProviderMode::Fallback | ProviderMode::Scripted => Arc::new(FallbackChat),
    };
    let embedder: Arc<dyn muallm_core::provider::EmbeddingProvider> = match cfg.embed.mode {
        ProviderMode::Remote => Arc::new(RemoteEmbedder::new(&cfg.embed.remote_config(), cfg.embed_dim)?),
        _ => Arc::new(HashEmbedder::new(cfg.embed_dim, FALLBACK_SEED)),
    };
    let reranker: Arc<dyn muallm_core::provider::RerankProvider> = match cfg.rerank.mode {
        ProviderMode::Remote => Arc::new(RemoteReranker::new(&cfg.rerank.remote_config())?),
        _ => Arc::new(IdentityReranker),
    };
    Ok(Providers {
        chat,
        embedder,
        reranker,
    })
}

pub fn chat_source(cfg: &ServiceConfig, providers: &Providers) -> ChatSource {
    match (&cfg.chat.mode, &cfg.chat.script) {
        (ProviderMode::Scripted, Some(path)) => ChatSource::Script(path.clone()),
        _ => ChatSource::Shared(providers.chat.clone()),
    }
}

pub fn build_fetcher(cfg: &ServiceConfig) -> Option<Fetcher> {
    let provider: Box<dyn muallm_core::fetch::FetchProvider> = match cfg.fetch.mode {
        ProviderMode::Remote => Box::new(HttpFetcher::new(
            cfg.fetch
                .endpoint
                .clone()
                .unwrap_or_else(|| DEFAULT_ARXIV_TEMPLATE.to_string()),
            cfg.fetch.timeout_secs,
        )),
        _ => Box::new(LocalFixtureFetcher::new(cfg.fixture_dir.clone()?)),
    };
    let mut fetcher = Fetcher::new(provider, cfg.download_dir.clone());
    if let Some(cmd) = &cfg.extractor_cmd {
        fetcher = fetcher.with_extractor(Box::new(CommandExtractor { command: cmd.clone() }));
    }
    Some(fetcher)
}

pub fn build_detector(cfg: &ServiceConfig) -> muallm_core::Result<Option<Arc<dyn DetectorProvider>>> {
    Ok(match cfg.detector.mode {
        ProviderMode::Remote => Some(Arc::new(RemoteDetector::new(&cfg.detector.remote_config())?)),
        ProviderMode::Scripted => match &cfg.detector.script {
            Some(path) => Some(Arc::new(StaticDetector::new(DetectionsFile::read(path)?.detections))),
            None => None,
        },
        ProviderMode::Fallback => None,
    })
}

/// Opens the index at `db_path` (or starts empty) and wires everything.
pub fn build_runtime(cfg: &ServiceConfig, providers: Providers) -> muallm_core::Result<Runtime> {
    let index = match &cfg.db_path {
        Some(p) if p.exists() => Index::load(p)?,
        _ => Index::new(),
    };
    let cache = match &cfg.cache_path {
        Some(p) => ContextCache::open(p)?,
        None => ContextCache::in_memory(),
    };
    let mut rt = Runtime::new(index, providers, Arc::new(cache))?;
    if let Some(p) = &cfg.db_path {
        rt = rt.persist_to(p);
    }
    if let Some(f) = build_fetcher(cfg) {
        rt = rt.with_fetcher(f);
    }
    rt.engine.fusion = cfg.fusion;
    Ok(rt)
}

pub fn limits(cfg: &ServiceConfig) -> Limits {
    Limits {
        max_steps: cfg.limits.max_steps,
        max_tool_output_chars: cfg.limits.max_tool_output_chars,
    }
}

pub fn tool_context(rt: &Runtime, cfg: &ServiceConfig) -> ToolContext {
    let mut tools = rt.tools();
    tools.max_hits = cfg.limits.max_hits;
    tools
}

/// Transcripts as `<dir>/<session_id>.json`.
#[derive(Debug, Clone)]
pub struct SessionStore {
    pub dir: PathBuf,
}

impl SessionStore {
    pub fn save(&self, t: &Transcript) -> std::io::Result<PathBuf> {
        std::fs::create_dir_all(&self.dir)?;
        let path = self.dir.join(format!("{}.json", t.session_id));
        let tmp = path.with_extension("json.tmp");
        std::fs::write(&tmp, serde_json::to_vec_pretty(t)?)?;
        std::fs::rename(&tmp, &path)?;
        Ok(path)
    }

    /// `None` for ids that are not plain names or have no file.
    pub fn load(&self, id: &str) -> Option<Transcript> {
        let plain = !id.is_empty() && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_');
        if !plain {
            return None;
        }
        let bytes = std::fs::read(self.dir.join(format!("{id}.json"))).ok()?;
        serde_json::from_slice(&bytes).ok()
    }
}

/// Everything a request handler needs. `runtime` is an error message when
/// the index could not be opened; data routes then answer 503.
#[derive(Clone)]
pub struct AppState {
    pub config: Arc<ServiceConfig>,
    pub runtime: Result<Runtime, String>,
    pub chat: ChatSource,
    pub detector: Option<Arc<dyn DetectorProvider>>,
    pub sessions: SessionStore,
}

impl AppState {
    /// Builds providers and runtime from `cfg`. Provider construction errors
    /// are fatal; an index that fails to open is reported per request.
    pub fn from_config(cfg: ServiceConfig) -> muallm_core::Result<Self> {
        let providers = build_providers(&cfg)?;
        let chat = chat_source(&cfg, &providers);
        let detector = build_detector(&cfg)?;
        let runtime = build_runtime(&cfg, providers).map_err(|e| {
            log::error!("index unavailable: {e}");
            e.to_string()
        });
        Ok(Self::new(cfg, runtime, chat, detector))
    }

    pub fn new(
        cfg: ServiceConfig,
        runtime: Result<Runtime, String>,
        chat: ChatSource,
        detector: Option<Arc<dyn DetectorProvider>>,
    ) -> Self {
        let sessions = SessionStore {
            dir: cfg.sessions_dir.clone(),
        };
        Self {
            config: Arc::new(cfg),
            runtime,
            chat,
            detector,
            sessions,
        }
    }
}
