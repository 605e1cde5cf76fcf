//! Document bundles, paragraph chunking with overlap, cached chunk
//! contextualization and image descriptions.
//!
//! All offsets are in characters (Unicode scalar values) of the document
//! text, which is the page texts joined by a blank line.

use std::collections::{HashMap, HashSet};
use std::fs::OpenOptions;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use base64::Engine as _;
use chrono::{DateTime, Utc};
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{io, Error, Result};
use crate::provider::{ChatMessage, ChatProvider, ChatRequest};

/// Separator placed between consecutive pages.
pub const PAGE_SEPARATOR: &str = "\n\n";
pub const DEFAULT_PROMPT_VERSION: &str = "ctx-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageAsset {
    pub image_id: String,
    pub path: PathBuf,
    pub page_no: usize,
    #[serde(default, rename = "caption", skip_serializing_if = "Option::is_none")]
    pub caption_from_source: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocumentBundle {
    pub doc_id: String,
    pub title: String,
    pub source_uri: String,
    pub pages: Vec<String>,
    #[serde(default)]
    pub images: Vec<ImageAsset>,
    pub fetched_at: DateTime<Utc>,
}

impl DocumentBundle {
    pub fn text(&self) -> String {
        self.pages.join(PAGE_SEPARATOR)
    }

    /// 1-based page holding character offset `pos` of [`Self::text`].
    pub fn page_of(&self, pos: usize) -> usize {
        let sep = PAGE_SEPARATOR.chars().count();
        let mut end = 0;
        for (i, p) in self.pages.iter().enumerate() {
            end += p.chars().count();
            if pos < end + sep || i + 1 == self.pages.len() {
                return i + 1;
            }
            end += sep;
        }
        1
    }

    /// Checks the bundle invariants. Image paths must already be resolved.
    pub fn validate(&self) -> Result<()> {
        if self.doc_id.trim().is_empty() {
            return Err(Error::MissingField("doc_id".into()));
        }
        if self.pages.is_empty() {
            return Err(Error::InvalidField {
                field: "pages".into(),
                reason: "no pages".into(),
            });
        }
        let mut seen = HashSet::new();
        for img in &self.images {
            if !seen.insert(img.image_id.as_str()) {
                return Err(Error::DuplicateImageId(img.image_id.clone()));
            }
            if img.page_no == 0 || img.page_no > self.pages.len() {
                return Err(Error::InvalidField {
                    field: format!("images[{}].page_no", img.image_id),
                    reason: format!("{} outside 1..={}", img.page_no, self.pages.len()),
                });
            }
            std::fs::File::open(&img.path).map_err(|e| Error::UnreadableImage {
                path: img.path.clone(),
                reason: e.to_string(),
            })?;
        }
        Ok(())
    }
}

fn required<'a>(obj: &'a serde_json::Map<String, Value>, key: &str) -> Result<&'a Value> {
    match obj.get(key) {
        None | Some(Value::Null) => Err(Error::MissingField(key.into())),
        Some(v) => Ok(v),
    }
}

fn string_field(obj: &serde_json::Map<String, Value>, key: &str) -> Result<String> {
    required(obj, key)?
        .as_str()
        .map(str::to_string)
        .ok_or_else(|| Error::InvalidField {
            field: key.into(),
            reason: "expected a string".into(),
        })
}

/// Reads a bundle manifest. Relative image paths resolve against the
/// manifest's directory.
pub fn load_bundle(manifest_path: impl AsRef<Path>) -> Result<DocumentBundle> {
    let manifest_path = manifest_path.as_ref();
    let text = std::fs::read_to_string(manifest_path).map_err(|e| io(manifest_path, e))?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    parse_manifest(&text, base)
}

pub fn parse_manifest(text: &str, base_dir: &Path) -> Result<DocumentBundle> {
    let value: Value = serde_json::from_str(text)?;
    let obj = value.as_object().ok_or_else(|| Error::InvalidField {
        field: "manifest".into(),
        reason: "expected a JSON object".into(),
    })?;
    let doc_id = string_field(obj, "doc_id")?;
    if doc_id.trim().is_empty() {
        return Err(Error::MissingField("doc_id".into()));
    }
    let title = string_field(obj, "title")?;
    let source_uri = match obj.get("source_uri") {
        Some(Value::String(s)) => s.clone(),
        _ => String::new(),
    };
    let pages: Vec<String> =
        serde_json::from_value(required(obj, "pages")?.clone()).map_err(|e| Error::InvalidField {
            field: "pages".into(),
            reason: e.to_string(),
        })?;
    let fetched_at = match obj.get("fetched_at") {
        Some(Value::String(s)) => DateTime::parse_from_rfc3339(s)
            .map_err(|e| Error::InvalidField {
                field: "fetched_at".into(),
                reason: e.to_string(),
            })?
            .with_timezone(&Utc),
        _ => Utc::now(),
    };
    let mut images = Vec::new();
    if let Some(list) = obj.get("images").filter(|v| !v.is_null()) {
        let list = list.as_array().ok_or_else(|| Error::InvalidField {
            field: "images".into(),
            reason: "expected an array".into(),
        })?;
        for item in list {
            let img = item.as_object().ok_or_else(|| Error::InvalidField {
                field: "images".into(),
                reason: "expected objects".into(),
            })?;
            let image_id = string_field(img, "image_id")?;
            let path = PathBuf::from(string_field(img, "path")?);
            let page_no = required(img, "page_no")?.as_u64().ok_or_else(|| Error::InvalidField {
                field: "page_no".into(),
                reason: "expected a positive integer".into(),
            })? as usize;
            let caption = img.get("caption").and_then(Value::as_str).map(str::to_string);
            images.push(ImageAsset {
                image_id,
                path: if path.is_absolute() { path } else { base_dir.join(path) },
                page_no,
                caption_from_source: caption,
            });
        }
    }
    let bundle = DocumentBundle {
        doc_id,
        title,
        source_uri,
        pages,
        images,
        fetched_at,
    };
    bundle.validate()?;
    Ok(bundle)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkConfig {
    pub max_chunk_chars: usize,
    pub overlap_chars: usize,
}

impl Default for ChunkConfig {
    fn default() -> Self {
        Self {
            max_chunk_chars: 4000,
            overlap_chars: 400,
        }
    }
}

impl ChunkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_chunk_chars == 0 || self.overlap_chars >= self.max_chunk_chars {
            return Err(Error::InvalidConfig(format!(
                "need max_chunk_chars > overlap_chars, got {} and {}",
                self.max_chunk_chars, self.overlap_chars
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub chunk_id: String,
    pub doc_id: String,
    pub ordinal: usize,
    pub text: String,
    /// Character range of `text` in the document, overlap included.
    pub char_span: (usize, usize),
    pub overlap_prefix_len: usize,
}

impl Chunk {
    /// The part of the text not repeated from the previous chunk.
    pub fn fresh_text(&self) -> &str {
        match self.text.char_indices().nth(self.overlap_prefix_len) {
            Some((b, _)) => &self.text[b..],
            None => "",
        }
    }
}

/// Start offsets of blank-line delimited paragraphs. A paragraph starts at
/// a non-blank line preceded by at least one blank line; the separator
/// whitespace belongs to the paragraph before it.
pub fn paragraph_starts(chars: &[char]) -> Vec<usize> {
    let mut starts = vec![0];
    let mut line_start = 0;
    let mut saw_blank = false;
    let mut i = 0;
    while i <= chars.len() {
        if i == chars.len() || chars[i] == '\n' {
            let line = &chars[line_start..i];
            let blank = line.iter().all(|c| c.is_whitespace());
            if !blank && saw_blank && line_start > 0 {
                starts.push(line_start);
            }
            saw_blank = blank;
            line_start = i + 1;
        }
        i += 1;
    }
    starts.dedup();
    starts
}

/// Greedy paragraph packing. Each chunk repeats up to `overlap_chars` of the
/// preceding text, shrunk when needed so the chunk stays within
/// `max_chunk_chars`. A paragraph longer than the budget is cut into
/// character windows.
pub fn chunk_document(bundle: &DocumentBundle, cfg: &ChunkConfig) -> Result<Vec<Chunk>> {
    cfg.validate()?;
    let text = bundle.text();
    if text.trim().is_empty() {
        return Err(Error::EmptyDocument(bundle.doc_id.clone()));
    }
    let chars: Vec<char> = text.chars().collect();
    let mut bounds = paragraph_starts(&chars);
    bounds.push(chars.len());
    let paragraphs: Vec<(usize, usize)> = bounds.windows(2).map(|w| (w[0], w[1])).collect();

    let max = cfg.max_chunk_chars;
    let mut spans: Vec<(usize, usize, usize)> = Vec::new(); // (fresh_start, end, overlap)
    let mut p = 0;
    let mut pos = 0;
    while pos < chars.len() {
        let (para_start, para_end) = paragraphs[p];
        let ov = cfg.overlap_chars.min(pos);
        if pos > para_start {
            // continuing the character windows of an oversize paragraph
            let end = (pos + max - ov).min(para_end);
            spans.push((pos, end, ov));
            pos = end;
            if end == para_end {
                p += 1;
            }
            continue;
        }
        let len = para_end - pos;
        if len + ov <= max {
            let mut end = para_end;
            p += 1;
            while p < paragraphs.len() && paragraphs[p].1 - pos + ov <= max {
                end = paragraphs[p].1;
                p += 1;
            }
            spans.push((pos, end, ov));
            pos = end;
        } else if len <= max {
            // the paragraph fits only with a shorter overlap
            spans.push((pos, para_end, max - len));
            pos = para_end;
            p += 1;
        } else {
            let end = pos + max - ov;
            spans.push((pos, end, ov));
            pos = end;
        }
    }

    Ok(spans
        .into_iter()
        .enumerate()
        .map(|(ordinal, (fresh, end, ov))| Chunk {
            chunk_id: format!("{}:{ordinal}", bundle.doc_id),
            doc_id: bundle.doc_id.clone(),
            ordinal,
            text: chars[fresh - ov..end].iter().collect(),
            char_span: (fresh - ov, end),
            overlap_prefix_len: ov,
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub key: String,
    pub value: String,
    pub prompt_version: String,
    pub created_at: DateTime<Utc>,
}

/// Content-addressed key/value store for generated context, persisted as
/// JSON lines (later lines win). Without a path it lives in memory only.
#[derive(Debug, Default)]
pub struct ContextCache {
    path: Option<PathBuf>,
    entries: Mutex<HashMap<String, CacheEntry>>,
}

impl ContextCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn open(path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        let mut entries = HashMap::new();
        match std::fs::read_to_string(&path) {
            Ok(text) => {
                for (i, line) in text.lines().enumerate() {
                    if line.trim().is_empty() {
                        continue;
                    }
                    match serde_json::from_str::<CacheEntry>(line) {
                        Ok(e) => {
                            entries.insert(e.key.clone(), e);
                        }
                        // a torn trailing write is tolerated; the entry is regenerated
                        Err(e) => log::warn!("{}:{}: skipping cache line: {e}", path.display(), i + 1),
                    }
                }
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
            Err(e) => return Err(io(&path, e)),
        }
        Ok(Self {
            path: Some(path),
            entries: Mutex::new(entries),
        })
    }

    pub fn get(&self, key: &str) -> Option<CacheEntry> {
        self.entries.lock().get(key).cloned()
    }

    pub fn put(&self, key: &str, value: &str, prompt_version: &str) -> Result<()> {
        let entry = CacheEntry {
            key: key.to_string(),
            value: value.to_string(),
            prompt_version: prompt_version.to_string(),
            created_at: Utc::now(),
        };
        let mut entries = self.entries.lock();
        if let Some(path) = &self.path {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
            }
            let mut line = serde_json::to_string(&entry)?;
            line.push('\n');
            OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .and_then(|mut f| f.write_all(line.as_bytes()))
                .map_err(|e| io(path, e))?;
        }
        entries.insert(entry.key.clone(), entry);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.lock().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// SHA-256 over doc id, chunk id, prompt version and chunk text, hex encoded.
pub fn cache_key(doc_id: &str, chunk_id: &str, prompt_version: &str, chunk_text: &str) -> String {
    let mut h = Sha256::new();
    for part in [doc_id, chunk_id, prompt_version, chunk_text] {
        h.update((part.len() as u64).to_le_bytes());
        h.update(part.as_bytes());
    }
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextualizedChunk {
    pub chunk: Chunk,
    pub context_blurb: String,
    pub cache_key: String,
}

impl ContextualizedChunk {
    /// Text that gets indexed: the blurb followed by the chunk.
    pub fn indexed_text(&self) -> String {
        format!("{}\n\n{}", self.context_blurb, self.chunk.text)
    }
}

/// Blurb used when no model is available.
pub fn fallback_blurb(title: &str, ordinal: usize) -> String {
    format!("Excerpt {} of \"{}\".", ordinal + 1, title)
}

fn context_prompt(chunk: &Chunk, previous: Option<&Chunk>, bundle: &DocumentBundle) -> Vec<ChatMessage> {
    let mut user = format!("Document title: {}\n\n", bundle.title);
    if let Some(prev) = previous {
        user.push_str("Preceding chunk:\n<chunk>\n");
        user.push_str(&prev.text);
        user.push_str("\n</chunk>\n\n");
    }
    user.push_str("Chunk:\n<chunk>\n");
    user.push_str(&chunk.text);
    user.push_str("\n</chunk>\n\nReply with one or two sentences placing this chunk in the document, for search indexing. Reply with the context only.");
    vec![
        ChatMessage::system("Situate this chunk within the document."),
        ChatMessage::user(user),
    ]
}

/// Returns the cached blurb when present; otherwise asks the model once and
/// stores the answer.
pub fn contextualize(
    chunk: &Chunk,
    previous: Option<&Chunk>,
    bundle: &DocumentBundle,
    llm: &dyn ChatProvider,
    cache: &ContextCache,
    prompt_version: &str,
) -> Result<ContextualizedChunk> {
    let key = cache_key(&bundle.doc_id, &chunk.chunk_id, prompt_version, &chunk.text);
    if let Some(hit) = cache.get(&key) {
        return Ok(ContextualizedChunk {
            chunk: chunk.clone(),
            context_blurb: hit.value,
            cache_key: key,
        });
    }
    let request = ChatRequest::new(context_prompt(chunk, previous, bundle))
        .with_fallback(fallback_blurb(&bundle.title, chunk.ordinal));
    let blurb = llm
        .complete(&request)
        .map_err(|source| Error::ChunkProvider {
            chunk_id: chunk.chunk_id.clone(),
            source,
        })?
        .trim()
        .to_string();
    let blurb = if blurb.is_empty() {
        fallback_blurb(&bundle.title, chunk.ordinal)
    } else {
        blurb
    };
    cache.put(&key, &blurb, prompt_version)?;
    Ok(ContextualizedChunk {
        chunk: chunk.clone(),
        context_blurb: blurb,
        cache_key: key,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImageKind {
    CircuitDiagram,
    Plot,
    Table,
    Other,
}

impl ImageKind {
    pub fn parse(s: &str) -> Self {
        let s = s.to_lowercase();
        if s.contains("circuit") || s.contains("schematic") {
            ImageKind::CircuitDiagram
        } else if s.contains("plot") || s.contains("graph") || s.contains("chart") {
            ImageKind::Plot
        } else if s.contains("table") {
            ImageKind::Table
        } else {
            ImageKind::Other
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            ImageKind::CircuitDiagram => "circuit_diagram",
            ImageKind::Plot => "plot",
            ImageKind::Table => "table",
            ImageKind::Other => "other",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageDescription {
    pub image_id: String,
    pub doc_id: String,
    pub kind: ImageKind,
    pub description: String,
    #[serde(default)]
    pub elements: Vec<String>,
}

impl ImageDescription {
    pub fn indexed_text(&self, title: &str) -> String {
        let mut s = format!("[{}] {}", self.kind.as_str(), self.description);
        if !self.elements.is_empty() {
            s.push_str("\nElements: ");
            s.push_str(&self.elements.join(", "));
        }
        s.push_str(&format!("\nFrom \"{title}\"."));
        s
    }
}

fn media_type(path: &Path) -> &'static str {
    match path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .as_deref()
    {
        Some("png") => "image/png",
        Some("jpg") | Some("jpeg") => "image/jpeg",
        Some("gif") => "image/gif",
        Some("webp") => "image/webp",
        Some("pgm") => "image/x-portable-graymap",
        _ => "application/octet-stream",
    }
}

/// Reads a model reply as JSON `{"kind","description","elements"}` or as
/// `Type:` / `Elements:` / `Description:` lines; anything else is taken as a
/// plain description of kind `other`.
pub fn parse_description(reply: &str) -> (ImageKind, String, Vec<String>) {
    let trimmed = reply.trim();
    if let Ok(Value::Object(obj)) = serde_json::from_str::<Value>(trimmed) {
        if let Some(desc) = obj.get("description").and_then(Value::as_str) {
            let kind = obj
                .get("kind")
                .and_then(Value::as_str)
                .map(ImageKind::parse)
                .unwrap_or(ImageKind::Other);
            let elements = obj
                .get("elements")
                .and_then(Value::as_array)
                .map(|a| a.iter().filter_map(Value::as_str).map(str::to_string).collect())
                .unwrap_or_default();
            return (kind, desc.trim().to_string(), elements);
        }
    }
    let mut kind = None;
    let mut elements = Vec::new();
    let mut description: Option<String> = None;
    for line in trimmed.lines() {
        let l = line.trim();
        if let Some(rest) = strip_label(l, "type") {
            kind = Some(ImageKind::parse(rest));
        } else if let Some(rest) = strip_label(l, "elements") {
            elements = rest
                .split(',')
                .map(|s| s.trim().to_string())
                .filter(|s| !s.is_empty())
                .collect();
        } else if let Some(rest) = strip_label(l, "description") {
            description = Some(rest.trim().to_string());
        } else if let Some(d) = description.as_mut() {
            if !l.is_empty() {
                d.push(' ');
                d.push_str(l);
            }
        }
    }
    match (kind, description) {
        (Some(k), Some(d)) if !d.is_empty() => (k, d, elements),
        (k, _) if k.is_some() || !elements.is_empty() => (k.unwrap_or(ImageKind::Other), trimmed.to_string(), elements),
        _ => (ImageKind::Other, trimmed.to_string(), Vec::new()),
    }
}

fn strip_label<'a>(line: &'a str, label: &str) -> Option<&'a str> {
    let (head, rest) = line.split_once(':')?;
    head.trim().eq_ignore_ascii_case(label).then_some(rest)
}

/// Asks a vision-capable model for the image's kind, labeled elements and a
/// description. The offline answer is the source caption (or file name).
pub fn describe_image(asset: &ImageAsset, bundle: &DocumentBundle, llm: &dyn ChatProvider) -> Result<ImageDescription> {
    let bytes = std::fs::read(&asset.path).map_err(|e| Error::UnreadableImage {
        path: asset.path.clone(),
        reason: e.to_string(),
    })?;
    let fallback = asset.caption_from_source.clone().unwrap_or_else(|| {
        asset
            .path
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| asset.image_id.clone())
    });
    let mut user = ChatMessage::user(format!(
        "Figure from \"{}\" (page {}). Source caption: {}\n\nAnswer with three lines:\nType: circuit diagram | plot | table | other\nElements: comma-separated labeled components or series\nDescription: what the figure shows, including values you can read",
        bundle.title,
        asset.page_no,
        asset.caption_from_source.as_deref().unwrap_or("(none)")
    ));
    user.images.push(format!(
        "data:{};base64,{}",
        media_type(&asset.path),
        base64::engine::general_purpose::STANDARD.encode(&bytes)
    ));
    let request = ChatRequest::new(vec![
        ChatMessage::system("You describe figures from circuit-design papers for a search index."),
        user,
    ])
    .with_fallback(fallback.clone());
    let reply = llm.complete(&request)?;
    let (kind, description, elements) = parse_description(&reply);
    let description = if description.is_empty() { fallback } else { description };
    Ok(ImageDescription {
        image_id: asset.image_id.clone(),
        doc_id: bundle.doc_id.clone(),
        kind,
        description,
        elements,
    })
}
