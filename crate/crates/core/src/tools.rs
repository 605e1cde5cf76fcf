//! The agent's tools (`search_db`, `paper_fetcher`, `load_data`,
//! `netlist_gen`) and citation selection over what the search tool showed.

use std::collections::BTreeSet;
use std::sync::Arc;

use parking_lot::Mutex;

use crate::agent::{run_session, AgentStep, Citation, Limits, Tool, ToolError, ToolRegistry, ToolSpec, Transcript};
use crate::corpus::load_bundle;
use crate::fetch::{resolve_manifest_path, FetchRequest, Fetcher};
use crate::index::{snippet, Modality, SearchHit};
use crate::ingest::IngestPipeline;
use crate::provider::ChatProvider;
use crate::retrieve::SearchEngine;
use muallm_netlist::{generate, NetlistConfig};

pub const NO_RESULTS: &str = "NO_RESULTS";
pub const DEFAULT_TOOL_HITS: usize = 5;

/// Hits shown to the model, one list per `search_db` call.
#[derive(Debug, Default)]
pub struct SearchLog {
    calls: Mutex<Vec<Vec<SearchHit>>>,
}

impl SearchLog {
    pub fn push(&self, hits: Vec<SearchHit>) {
        self.calls.lock().push(hits);
    }

    pub fn calls(&self) -> Vec<Vec<SearchHit>> {
        self.calls.lock().clone()
    }
}

/// Text of a record without its contextual blurb.
fn passage(hit: &SearchHit) -> String {
    let body = match hit.modality {
        Modality::Text => hit.body.split_once("\n\n").map_or(hit.body.as_str(), |(_, rest)| rest),
        Modality::Image => hit.body.as_str(),
    };
    snippet(body)
}

pub fn format_hits(hits: &[SearchHit]) -> String {
    if hits.is_empty() {
        return NO_RESULTS.to_string();
    }
    hits.iter()
        .enumerate()
        .map(|(i, h)| match h.modality {
            Modality::Text => format!("[{}] {} (text): {}", i + 1, h.metadata.title, passage(h)),
            Modality::Image => format!(
                "[{}] {} (image) path={}: {}",
                i + 1,
                h.metadata.title,
                h.metadata.image_path.as_deref().unwrap_or("?"),
                passage(h)
            ),
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn wants_titles(input: &str) -> bool {
    let q = input.to_lowercase();
    q.trim() == "--titles" || (q.contains("title") && (q.contains("list") || q.contains("all")))
}

fn load(ingest: &IngestPipeline, fetcher: Option<&Fetcher>, input: &str) -> String {
    let manifest = match fetcher {
        Some(f) => f.resolve_manifest(input),
        None => resolve_manifest_path(input),
    };
    let result = manifest.and_then(load_bundle).and_then(|bundle| ingest.ingest(&bundle));
    match result {
        Ok(report) => report.summary(),
        Err(e) => format!("load failed: {}", e.code()),
    }
}

pub struct SearchDbTool {
    pub engine: SearchEngine,
    pub ingest: Option<Arc<IngestPipeline>>,
    pub fetcher: Option<Arc<Fetcher>>,
    pub max_hits: usize,
    pub log: Arc<SearchLog>,
}

impl Tool for SearchDbTool {
    fn spec(&self) -> ToolSpec {
        ToolSpec {
            name: "search_db".into(),
            description: "Hybrid keyword and semantic search over the ingested papers and their figures. Ask for \"list all paper titles\" to see what is loaded.".into(),
            input_schema: "a natural-language query, \"--titles\", or \"--load_data <path>\"".into(),
        }
    }

    fn call(&self, input: &str) -> Result<String, ToolError> {
        let input = input.trim();
        if let Some(rest) = input.strip_prefix("--load_data") {
            let ingest = self
                .ingest
                .as_ref()
                .ok_or_else(|| ToolError("loading is disabled".into()))?;
            return Ok(load(ingest, self.fetcher.as_deref(), rest));
        }
        if wants_titles(input) {
            let docs = self.engine.index.read().documents();
            if docs.is_empty() {
                return Ok(NO_RESULTS.to_string());
            }
            let mut out = format!("{} papers in the database:", docs.len());
            for (doc_id, title) in docs {
                out.push_str(&format!("\n- {title} ({doc_id})"));
            }
            return Ok(out);
        }
        if input.is_empty() {
            return Err(ToolError("empty query".into()));
        }
        let outcome = self.engine.search(input)?;
        let hits: Vec<SearchHit> = outcome.hits.into_iter().take(self.max_hits).collect();
        let mut out = format_hits(&hits);
        for w in &outcome.warnings {
            out.push_str(&format!("\nnote: {w}"));
        }
        self.log.push(hits);
        Ok(out)
    }
}

pub struct PaperFetcherTool {
    pub fetcher: Arc<Fetcher>,
}

impl Tool for PaperFetcherTool {
    fn spec(&self) -> ToolSpec {
        ToolSpec {
            name: "paper_fetcher".into(),
            description: "Downloads a paper so it can be loaded with load_data.".into(),
            input_schema: "\"url <url>\", \"arxiv_id <id>\" or \"title_query <words>\"".into(),
        }
    }

    fn call(&self, input: &str) -> Result<String, ToolError> {
        let result = self.fetcher.fetch(&FetchRequest::parse(input)?)?;
        let mut out = format!(
            "fetched {} -> {} ({} bytes), reference {}",
            result.source_uri,
            result.doc_path.display(),
            result.bytes,
            result.reference
        );
        match &result.manifest_path {
            Some(m) => out.push_str(&format!(
                "\nextracted bundle at {}; load it with: load_data {}",
                m.display(),
                result.reference
            )),
            None => out.push_str("\nno extracted bundle is available; the PDF needs extraction before load_data"),
        }
        Ok(out)
    }
}

pub struct LoadDataTool {
    pub ingest: Arc<IngestPipeline>,
    pub fetcher: Option<Arc<Fetcher>>,
}

impl Tool for LoadDataTool {
    fn spec(&self) -> ToolSpec {
        ToolSpec {
            name: "load_data".into(),
            description: "Ingests a document bundle into the search database.".into(),
            input_schema: "a fetch reference, a bundle directory or a manifest.json path".into(),
        }
    }

    fn call(&self, input: &str) -> Result<String, ToolError> {
        Ok(load(&self.ingest, self.fetcher.as_deref(), input))
    }
}

pub struct NetlistGenTool {
    pub config: NetlistConfig,
}

impl Tool for NetlistGenTool {
    fn spec(&self) -> ToolSpec {
        ToolSpec {
            name: "netlist_gen".into(),
            description: "Turns a schematic image with component detections into a SPICE netlist.".into(),
            input_schema: "\"image=<pgm path> detections=<json path>\"".into(),
        }
    }

    fn call(&self, input: &str) -> Result<String, ToolError> {
        let mut image = None;
        let mut detections = None;
        let mut bare = Vec::new();
        for tok in input.split_whitespace() {
            if let Some(p) = tok.strip_prefix("image=") {
                image = Some(p);
            } else if let Some(p) = tok.strip_prefix("detections=") {
                detections = Some(p);
            } else {
                bare.push(tok);
            }
        }
        let image = image.or_else(|| bare.first().copied());
        let detections = detections.or_else(|| bare.get(1).copied());
        let (Some(image), Some(detections)) = (image, detections) else {
            return Err(ToolError("expected image=<path> detections=<path>".into()));
        };
        let netlist = generate(image, detections, &self.config).map_err(|e| ToolError(e.to_string()))?;
        Ok(netlist.to_spice())
    }
}

fn citation(hit: &SearchHit) -> Citation {
    Citation {
        doc_id: hit.doc_id.clone(),
        record_id: hit.record_id.clone(),
        modality: hit.modality,
        title: hit.metadata.title.clone(),
        image_path: hit.metadata.image_path.clone(),
        image_id: hit.metadata.image_id.clone(),
    }
}

/// Records the answer points at, drawn only from hits the model was shown:
/// `[n]` tags refer to the latest search with at least n hits; a mentioned
/// title cites that paper's best text hit; a mentioned image id cites that
/// image.
pub fn select_citations(answer: &str, log: &SearchLog) -> Vec<Citation> {
    let calls = log.calls();
    let mut chosen: Vec<&SearchHit> = Vec::new();
    let mut seen = BTreeSet::new();

    for n in citation_tags(answer) {
        if let Some(hits) = calls.iter().rev().find(|c| c.len() >= n) {
            if seen.insert(hits[n - 1].record_id.as_str()) {
                chosen.push(&hits[n - 1]);
            }
        }
    }

    let lower = answer.to_lowercase();
    for h in calls.iter().rev().flatten() {
        let title = h.metadata.title.to_lowercase();
        let cites = match h.modality {
            Modality::Text => {
                !title.is_empty()
                    && lower.contains(&title)
                    && !chosen
                        .iter()
                        .any(|c| c.doc_id == h.doc_id && c.modality == Modality::Text)
            }
            Modality::Image => h
                .metadata
                .image_id
                .as_deref()
                .is_some_and(|id| contains_word(&lower, &id.to_lowercase())),
        };
        if cites && seen.insert(h.record_id.as_str()) {
            chosen.push(h);
        }
    }
    chosen.into_iter().map(citation).collect()
}

/// The n of every `[n]` tag, n ≥ 1, in order of appearance.
pub fn citation_tags(text: &str) -> Vec<usize> {
    let mut tags = Vec::new();
    let mut rest = text;
    while let Some(open) = rest.find('[') {
        rest = &rest[open + 1..];
        let digits = rest.bytes().take_while(u8::is_ascii_digit).count();
        if digits > 0 && rest[digits..].starts_with(']') {
            if let Ok(n) = rest[..digits].parse::<usize>() {
                if n > 0 {
                    tags.push(n);
                }
            }
        }
    }
    tags
}

fn contains_word(haystack: &str, word: &str) -> bool {
    haystack.match_indices(word).any(|(pos, _)| {
        let before = haystack[..pos].chars().next_back();
        let after = haystack[pos + word.len()..].chars().next();
        !before.is_some_and(|c| c.is_alphanumeric()) && !after.is_some_and(|c| c.is_alphanumeric())
    })
}

/// Shared handles the per-session tools are built from.
#[derive(Clone)]
pub struct ToolContext {
    pub engine: SearchEngine,
    pub ingest: Option<Arc<IngestPipeline>>,
    pub fetcher: Option<Arc<Fetcher>>,
    pub netlist: NetlistConfig,
    pub max_hits: usize,
}

impl ToolContext {
    pub fn new(engine: SearchEngine) -> Self {
        Self {
            engine,
            ingest: None,
            fetcher: None,
            netlist: NetlistConfig::default(),
            max_hits: DEFAULT_TOOL_HITS,
        }
    }

    pub fn registry(&self, log: Arc<SearchLog>) -> ToolRegistry {
        let mut r = ToolRegistry::new();
        r.register(Arc::new(SearchDbTool {
            engine: self.engine.clone(),
            ingest: self.ingest.clone(),
            fetcher: self.fetcher.clone(),
            max_hits: self.max_hits,
            log,
        }));
        if let Some(fetcher) = &self.fetcher {
            r.register(Arc::new(PaperFetcherTool {
                fetcher: fetcher.clone(),
            }));
        }
        if let Some(ingest) = &self.ingest {
            r.register(Arc::new(LoadDataTool {
                ingest: ingest.clone(),
                fetcher: self.fetcher.clone(),
            }));
        }
        r.register(Arc::new(NetlistGenTool {
            config: self.netlist.clone(),
        }));
        r
    }

    /// One agent session with fresh tools; citations are filled in from the
    /// session's searches.
    pub fn run_agent(
        &self,
        query: &str,
        llm: &dyn ChatProvider,
        limits: &Limits,
        observer: &mut dyn FnMut(&AgentStep),
    ) -> Transcript {
        let log = Arc::new(SearchLog::default());
        let registry = self.registry(log.clone());
        let mut transcript = run_session(query, &registry, llm, limits, observer);
        transcript.citations = select_citations(&transcript.final_answer, &log);
        transcript
    }
}
