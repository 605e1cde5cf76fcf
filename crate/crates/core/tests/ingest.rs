mod common;

use std::path::Path;
use std::sync::{mpsc, Arc, Mutex};

use muallm_core::agent::Tool;
use muallm_core::corpus::{chunk_document, load_bundle, ContextCache, DocumentBundle, ImageAsset};
use muallm_core::cost::{preprocessing_cost, CostModelConfig};
use muallm_core::embed::HashEmbedder;
use muallm_core::fetch::{FetchRequest, Fetcher, LocalFixtureFetcher};
use muallm_core::index::{Index, Modality};
use muallm_core::ingest::IngestPipeline;
use muallm_core::provider::{ChatProvider, ChatRequest, CountingChat, FallbackChat};
use muallm_core::tools::LoadDataTool;
use muallm_core::Error;
use muallm_core::ProviderError;

use common::fixtures;

const PAGE_ONE: &str = "Abstract\n\nA folded cascode stage with gain boosting reaches 92 dB of open-loop gain.\n\nThe boost amplifiers are themselves folded cascodes.";
const PAGE_TWO: &str =
    "Measurements\n\nThe unity-gain frequency is 310 MHz with a 2 pF load and 58 degrees of phase margin.";

/// Writes a two-page, one-figure bundle and returns its manifest path.
fn write_bundle(dir: &Path, doc_id: &str, pages: &[&str]) -> std::path::PathBuf {
    std::fs::copy(fixtures().join("corpus/capless-ldo/fig3.png"), dir.join("gain.png")).unwrap();
    let manifest = serde_json::json!({
        "doc_id": doc_id,
        "title": "A Gain-Boosted Folded Cascode for Fast Settling",
        "source_uri": "fixture://gain-boost",
        "fetched_at": "2026-02-01T00:00:00Z",
        "pages": pages,
        "images": [{"image_id": "fig1", "path": "gain.png", "page_no": 2, "caption": "Open-loop gain and phase versus frequency."}],
    });
    let path = dir.join("manifest.json");
    std::fs::write(&path, serde_json::to_string_pretty(&manifest).unwrap()).unwrap();
    path
}

fn pipeline(chat: Arc<CountingChat<FallbackChat>>) -> IngestPipeline {
    IngestPipeline::new(
        Index::new().into_shared(),
        Arc::new(HashEmbedder::default()),
        chat,
        Arc::new(ContextCache::in_memory()),
    )
}

#[test]
fn load_data_reports_counts_then_replacements() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_bundle(dir.path(), "gain-boost", &[PAGE_ONE, PAGE_TWO]);
    let ingest = Arc::new(pipeline(Arc::new(CountingChat::new(FallbackChat))));
    let tool = LoadDataTool {
        ingest: ingest.clone(),
        fetcher: None,
    };

    let chunks = chunk_document(&load_bundle(&manifest).unwrap(), &ingest.chunking)
        .unwrap()
        .len();
    let first = tool.call(dir.path().to_str().unwrap()).unwrap();
    let total = chunks + 1;
    assert_eq!(
        first,
        format!(
            "added {chunks} text record{}, 1 image record for gain-boost (new {total}, replaced 0, index total {total})",
            if chunks == 1 { "" } else { "s" }
        )
    );

    let again = tool.call(manifest.to_str().unwrap()).unwrap();
    assert!(
        again.ends_with(&format!("(new 0, replaced {total}, index total {total})")),
        "{again}"
    );
}

#[test]
fn second_ingest_reuses_cached_context() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_bundle(dir.path(), "gain-boost", &[PAGE_ONE, PAGE_TWO]);
    let bundle = load_bundle(&manifest).unwrap();
    let chat = Arc::new(CountingChat::new(FallbackChat));
    let ingest = pipeline(chat.clone());
    let chunks = chunk_document(&bundle, &ingest.chunking).unwrap().len();

    ingest.ingest(&bundle).unwrap();
    // one contextualization per chunk, one description per figure
    assert_eq!(chat.calls(), chunks + bundle.images.len());
    ingest.ingest(&bundle).unwrap();
    assert_eq!(
        chat.calls(),
        chunks + 2 * bundle.images.len(),
        "chunk contexts come from the cache"
    );
}

#[test]
fn manifest_without_doc_id_is_rejected_by_name() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("manifest.json"),
        r#"{"title": "x", "source_uri": "", "fetched_at": "2026-02-01T00:00:00Z", "pages": ["p"]}"#,
    )
    .unwrap();
    let ingest = Arc::new(pipeline(Arc::new(CountingChat::new(FallbackChat))));
    let tool = LoadDataTool {
        ingest: ingest.clone(),
        fetcher: None,
    };
    assert_eq!(
        tool.call(dir.path().to_str().unwrap()).unwrap(),
        "load failed: MissingField(doc_id)"
    );
    assert!(ingest.index.read().is_empty());
}

#[test]
fn unreadable_image_leaves_the_previous_version_in_place() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_bundle(dir.path(), "gain-boost", &[PAGE_ONE, PAGE_TWO]);
    let ingest = pipeline(Arc::new(CountingChat::new(FallbackChat)));
    ingest.ingest(&load_bundle(&manifest).unwrap()).unwrap();
    let before: Vec<_> = ingest.index.read().records().cloned().collect();

    let mut edited: DocumentBundle = load_bundle(&manifest).unwrap();
    edited.pages[1] = "Revised measurements with a different load.".into();
    edited.images.push(ImageAsset {
        image_id: "fig2".into(),
        path: dir.path().join("missing.png"),
        page_no: 1,
        caption_from_source: None,
    });
    let err = ingest.ingest(&edited).unwrap_err();
    assert!(matches!(err, Error::UnreadableImage { .. }), "{err}");
    let after: Vec<_> = ingest.index.read().records().cloned().collect();
    assert_eq!(before, after);

    // a new document that fails leaves nothing behind
    let mut fresh = edited.clone();
    fresh.doc_id = "other".into();
    assert!(ingest.ingest(&fresh).is_err());
    assert!(ingest.index.read().records().all(|r| r.doc_id == "gain-boost"));
}

/// Blocks its first completion until released, so a test can hold the
/// writer role mid-ingest.
struct GateChat {
    entered: Mutex<Option<mpsc::Sender<()>>>,
    release: Mutex<mpsc::Receiver<()>>,
}

impl ChatProvider for GateChat {
    fn name(&self) -> &str {
        "gate"
    }
    fn complete(&self, req: &ChatRequest) -> Result<String, ProviderError> {
        if let Some(tx) = self.entered.lock().unwrap().take() {
            tx.send(()).unwrap();
            self.release.lock().unwrap().recv().unwrap();
        }
        FallbackChat.complete(req)
    }
}

#[test]
fn try_ingest_refuses_while_a_writer_holds_the_lock() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_bundle(dir.path(), "gain-boost", &[PAGE_ONE, PAGE_TWO]);
    let bundle = load_bundle(&manifest).unwrap();
    let (entered_tx, entered_rx) = mpsc::channel();
    let (release_tx, release_rx) = mpsc::channel();
    let chat = GateChat {
        entered: Mutex::new(Some(entered_tx)),
        release: Mutex::new(release_rx),
    };
    let ingest = IngestPipeline::new(
        Index::new().into_shared(),
        Arc::new(HashEmbedder::default()),
        Arc::new(chat),
        Arc::new(ContextCache::in_memory()),
    );
    std::thread::scope(|s| {
        let slow = s.spawn(|| ingest.ingest(&bundle));
        entered_rx.recv().unwrap();
        assert!(ingest.is_busy());
        assert!(matches!(ingest.try_ingest(&bundle), Err(Error::WriterBusy)));
        release_tx.send(()).unwrap();
        slow.join().unwrap().unwrap();
    });
    assert!(ingest.try_ingest(&bundle).is_ok());
}

#[test]
fn fetching_twice_returns_the_same_file() {
    let dl = tempfile::tempdir().unwrap();
    let fetcher = Fetcher::new(Box::new(LocalFixtureFetcher::new(fixtures().join("fetch"))), dl.path());
    let req = FetchRequest::parse("arxiv_id fixture-002").unwrap();
    let a = fetcher.fetch(&req).unwrap();
    let b = fetcher.fetch(&req).unwrap();
    assert_eq!(a.doc_path, b.doc_path);
    assert_eq!(a.reference, b.reference);
    assert!(a.needs_extraction && a.manifest_path.is_none());
    let pdfs = std::fs::read_dir(dl.path())
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "pdf"))
        .count();
    assert_eq!(pdfs, 1);

    let missing = fetcher
        .fetch(&FetchRequest::parse("arxiv_id fixture-404").unwrap())
        .unwrap_err();
    assert_eq!(missing.code(), "NotFound(fixture-404)");
}

#[test]
fn preprocessing_cost_of_a_single_chunk() {
    // 40 characters -> 10 tokens, title "Tiny" -> 1 token, one chunk, no figures:
    //   contextualization in  = 100 + 1 + 0 + 10 = 111, out = 60
    //   cost = 111/1000 * 0.0025 + 60/1000 * 0.01 = 0.0008775
    //   embedding = (10 + 60)/1000 * 0.00002 = 1.4e-6
    let bundle = DocumentBundle {
        doc_id: "tiny".into(),
        title: "Tiny".into(),
        source_uri: String::new(),
        pages: vec!["a".repeat(40)],
        images: vec![],
        fetched_at: chrono::DateTime::UNIX_EPOCH,
    };
    let c = preprocessing_cost(&bundle, &Default::default(), &CostModelConfig::default()).unwrap();
    assert_eq!(
        (c.chunks, c.images, c.contextualization_input_tokens, c.embedding_tokens),
        (1, 0, 111, 70)
    );
    assert!((c.contextualization - 0.0008775).abs() < 1e-15);
    assert!((c.embedding - 1.4e-6).abs() < 1e-18);
    assert_eq!(c.captioning, 0.0);

    // one figure adds 1100 in and 200 out for captioning and 200 embedded tokens
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("f.png"), b"png").unwrap();
    let mut with_fig = bundle.clone();
    with_fig.images.push(ImageAsset {
        image_id: "f".into(),
        path: dir.path().join("f.png"),
        page_no: 1,
        caption_from_source: None,
    });
    let c = preprocessing_cost(&with_fig, &Default::default(), &CostModelConfig::default()).unwrap();
    assert!((c.captioning - 0.00475).abs() < 1e-15);
    assert_eq!(c.embedding_tokens, 270);
    assert!((c.total - (0.0008775 + 0.00475 + 5.4e-6)).abs() < 1e-15);
}

#[test]
fn text_and_figure_hits_come_from_one_store() {
    let dl = tempfile::tempdir().unwrap();
    let rt = common::corpus_runtime(dl.path());
    let out = rt.engine.search("bandgap reference curvature figure").unwrap();
    assert!(out.hits.iter().any(|h| h.modality == Modality::Image));
    assert!(out.hits.iter().any(|h| h.modality == Modality::Text));
    let index = rt.index.read();
    for h in &out.hits {
        let r = index.get(&h.record_id).expect("every hit is a stored record");
        assert_eq!((&r.doc_id, r.modality), (&h.doc_id, h.modality));
        if h.modality == Modality::Image {
            assert!(Path::new(h.metadata.image_path.as_deref().unwrap()).is_file());
        }
    }
    let docs = index.documents();
    assert_eq!(docs.len(), 6);
}
