//! Paper download: by URL, arXiv id or title, into a local directory, with
//! optional extraction into a bundle manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Duration;

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{io, Error, Result};

pub const FETCH_TIMEOUT_ENV: &str = "MUALLM_FETCH_TIMEOUT_SECS";
pub const DEFAULT_FETCH_TIMEOUT_SECS: u64 = 60;
pub const DEFAULT_ARXIV_TEMPLATE: &str = "https://arxiv.org/pdf/{id}";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FetchKind {
    Url,
    ArxivId,
    TitleQuery,
}

impl FetchKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "url" => Ok(Self::Url),
            "arxiv_id" | "arxiv" => Ok(Self::ArxivId),
            "title_query" | "title" => Ok(Self::TitleQuery),
            other => Err(Error::UnsupportedKind(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FetchRequest {
    pub kind: FetchKind,
    pub value: String,
}

impl FetchRequest {
    /// Reads tool input: `url <u>`, `arxiv_id <id>`, `title_query <text>`,
    /// or a bare value whose kind is guessed (http(s) URL, else arXiv-like
    /// id, else title).
    pub fn parse(input: &str) -> Result<Self> {
        let input = input.trim();
        if input.is_empty() {
            return Err(Error::MissingField("value".into()));
        }
        if let Some((head, rest)) = input.split_once(char::is_whitespace) {
            let head = head.trim_end_matches([':', '=']);
            if let Ok(kind) = FetchKind::parse(head) {
                let value = rest.trim();
                if value.is_empty() {
                    return Err(Error::MissingField("value".into()));
                }
                return Ok(Self {
                    kind,
                    value: value.to_string(),
                });
            }
        }
        let kind = if input.starts_with("http://") || input.starts_with("https://") {
            FetchKind::Url
        } else if !input.contains(char::is_whitespace) && input.chars().any(|c| c.is_ascii_digit()) {
            FetchKind::ArxivId
        } else {
            FetchKind::TitleQuery
        };
        Ok(Self {
            kind,
            value: input.to_string(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FetchResult {
    /// Short handle for the fetched document, usable as `load_data` input.
    pub reference: String,
    pub doc_path: PathBuf,
    pub source_uri: String,
    pub bytes: u64,
    /// The document is a PDF rather than a bundle.
    pub needs_extraction: bool,
    /// Extracted bundle, when one exists.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest_path: Option<PathBuf>,
}

pub trait FetchProvider: Send + Sync {
    fn name(&self) -> &str;
    fn fetch(&self, request: &FetchRequest, dest_dir: &Path) -> Result<FetchResult>;
}

pub trait PdfExtractor: Send + Sync {
    /// Writes a bundle for `pdf` into `out_dir` and returns its manifest path.
    fn extract(&self, pdf: &Path, out_dir: &Path) -> Result<PathBuf>;
}

/// Runs an external program as `<command...> <pdf> <out_dir>`; it must leave
/// `manifest.json` in `out_dir`.
pub struct CommandExtractor {
    pub command: String,
}

impl PdfExtractor for CommandExtractor {
    fn extract(&self, pdf: &Path, out_dir: &Path) -> Result<PathBuf> {
        let mut parts = self.command.split_whitespace();
        let program = parts
            .next()
            .ok_or_else(|| Error::InvalidConfig("empty extractor command".into()))?;
        fs::create_dir_all(out_dir).map_err(|e| io(out_dir, e))?;
        let status = Command::new(program)
            .args(parts)
            .arg(pdf)
            .arg(out_dir)
            .status()
            .map_err(|e| io(program, e))?;
        if !status.success() {
            return Err(Error::InvalidConfig(format!("extractor exited with {status}")));
        }
        let manifest = out_dir.join("manifest.json");
        if !manifest.is_file() {
            return Err(Error::NotFound(manifest.display().to_string()));
        }
        Ok(manifest)
    }
}

fn content_name(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))[..16].to_string()
}

fn copy_dir(from: &Path, to: &Path) -> Result<()> {
    fs::create_dir_all(to).map_err(|e| io(to, e))?;
    for entry in fs::read_dir(from).map_err(|e| io(from, e))? {
        let entry = entry.map_err(|e| io(from, e))?;
        let target = to.join(entry.file_name());
        if entry.path().is_dir() {
            copy_dir(&entry.path(), &target)?;
        } else {
            fs::copy(entry.path(), &target).map_err(|e| io(&target, e))?;
        }
    }
    Ok(())
}

/// Writes `bytes` under a content-hash name and returns the result skeleton.
pub fn store_document(bytes: &[u8], source_uri: &str, dest_dir: &Path) -> Result<FetchResult> {
    fs::create_dir_all(dest_dir).map_err(|e| io(dest_dir, e))?;
    let reference = content_name(bytes);
    let doc_path = dest_dir.join(format!("{reference}.pdf"));
    let tmp = dest_dir.join(format!(".{reference}.pdf.tmp"));
    fs::write(&tmp, bytes).map_err(|e| io(&tmp, e))?;
    fs::rename(&tmp, &doc_path).map_err(|e| io(&doc_path, e))?;
    Ok(FetchResult {
        reference,
        doc_path,
        source_uri: source_uri.to_string(),
        bytes: bytes.len() as u64,
        needs_extraction: true,
        manifest_path: None,
    })
}

/// Offline fetcher over a directory of `<id>.pdf` files. A sibling
/// `<id>/manifest.json` plays the part of an already extracted bundle and
/// is copied next to the download.
pub struct LocalFixtureFetcher {
    pub root: PathBuf,
}

impl LocalFixtureFetcher {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    fn resolve_id(&self, request: &FetchRequest) -> Result<String> {
        match request.kind {
            FetchKind::ArxivId => Ok(request.value.trim().to_string()),
            FetchKind::Url => {
                let last = request
                    .value
                    .trim_end_matches('/')
                    .rsplit('/')
                    .next()
                    .unwrap_or_default();
                Ok(last.strip_suffix(".pdf").unwrap_or(last).to_string())
            }
            FetchKind::TitleQuery => {
                let needle = request.value.trim().to_lowercase();
                let mut ids: Vec<String> = Vec::new();
                for entry in fs::read_dir(&self.root).map_err(|e| io(&self.root, e))?.flatten() {
                    let manifest = entry.path().join("manifest.json");
                    let Ok(text) = fs::read_to_string(&manifest) else {
                        continue;
                    };
                    let Ok(v) = serde_json::from_str::<serde_json::Value>(&text) else {
                        continue;
                    };
                    let title = v["title"].as_str().unwrap_or_default().to_lowercase();
                    if !needle.is_empty() && title.contains(&needle) {
                        ids.push(entry.file_name().to_string_lossy().into_owned());
                    }
                }
                ids.sort();
                ids.into_iter()
                    .next()
                    .ok_or_else(|| Error::NotFound(format!("title {:?}", request.value)))
            }
        }
    }
}

impl FetchProvider for LocalFixtureFetcher {
    fn name(&self) -> &str {
        "local"
    }

    fn fetch(&self, request: &FetchRequest, dest_dir: &Path) -> Result<FetchResult> {
        let id = self.resolve_id(request)?;
        if id.is_empty() || id.contains(['/', '\\']) || id.starts_with('.') {
            return Err(Error::InvalidField {
                field: "value".into(),
                reason: format!("bad document id {id:?}"),
            });
        }
        let pdf = self.root.join(format!("{id}.pdf"));
        let bytes = fs::read(&pdf).map_err(|_| Error::NotFound(id.clone()))?;
        let source_uri = match request.kind {
            FetchKind::Url => request.value.trim().to_string(),
            _ => format!("fixture://{id}"),
        };
        let mut result = store_document(&bytes, &source_uri, dest_dir)?;
        let sidecar = self.root.join(&id);
        if sidecar.join("manifest.json").is_file() {
            let out = dest_dir.join(&result.reference);
            copy_dir(&sidecar, &out)?;
            result.manifest_path = Some(out.join("manifest.json"));
        }
        Ok(result)
    }
}

/// Downloads over HTTP. arXiv ids are expanded through `arxiv_template`.
pub struct HttpFetcher {
    pub arxiv_template: String,
    agent: ureq::Agent,
}

impl HttpFetcher {
    pub fn new(arxiv_template: impl Into<String>, timeout_secs: u64) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(timeout_secs.max(1))))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            arxiv_template: arxiv_template.into(),
            agent,
        }
    }

    /// Timeout from `MUALLM_FETCH_TIMEOUT_SECS`, else 60 s.
    pub fn from_env() -> Self {
        let timeout = std::env::var(FETCH_TIMEOUT_ENV)
            .ok()
            .and_then(|v| v.parse().ok())
            .unwrap_or(DEFAULT_FETCH_TIMEOUT_SECS);
        Self::new(DEFAULT_ARXIV_TEMPLATE, timeout)
    }
}

impl FetchProvider for HttpFetcher {
    fn name(&self) -> &str {
        "http"
    }

    fn fetch(&self, request: &FetchRequest, dest_dir: &Path) -> Result<FetchResult> {
        let url = match request.kind {
            FetchKind::Url => request.value.trim().to_string(),
            FetchKind::ArxivId => self.arxiv_template.replace("{id}", request.value.trim()),
            FetchKind::TitleQuery => return Err(Error::UnsupportedKind("title_query".into())),
        };
        let mut resp = self.agent.get(&url).call().map_err(|e| Error::Network {
            message: e.to_string(),
            retryable: matches!(
                e,
                ureq::Error::Timeout(_) | ureq::Error::Io(_) | ureq::Error::ConnectionFailed
            ),
        })?;
        let status = resp.status().as_u16();
        if status == 404 {
            return Err(Error::NotFound(url));
        }
        if status >= 300 {
            return Err(Error::Network {
                message: format!("GET {url} returned HTTP {status}"),
                retryable: status == 429 || status >= 500,
            });
        }
        let bytes = resp
            .body_mut()
            .with_config()
            .limit(200 * 1024 * 1024)
            .read_to_vec()
            .map_err(|e| Error::Network {
                message: e.to_string(),
                retryable: true,
            })?;
        store_document(&bytes, &url, dest_dir)
    }
}

/// Provider, optional extractor and download directory, plus the
/// reference → manifest table that `load_data` resolves against.
pub struct Fetcher {
    pub provider: Box<dyn FetchProvider>,
    pub extractor: Option<Box<dyn PdfExtractor>>,
    pub dest_dir: PathBuf,
    fetched: RwLock<BTreeMap<String, FetchResult>>,
}

impl Fetcher {
    pub fn new(provider: Box<dyn FetchProvider>, dest_dir: impl Into<PathBuf>) -> Self {
        Self {
            provider,
            extractor: None,
            dest_dir: dest_dir.into(),
            fetched: RwLock::new(BTreeMap::new()),
        }
    }

    pub fn with_extractor(mut self, extractor: Box<dyn PdfExtractor>) -> Self {
        self.extractor = Some(extractor);
        self
    }

    pub fn fetch(&self, request: &FetchRequest) -> Result<FetchResult> {
        let mut result = self.provider.fetch(request, &self.dest_dir)?;
        if result.needs_extraction && result.manifest_path.is_none() {
            if let Some(extractor) = &self.extractor {
                let out = self.dest_dir.join(&result.reference);
                result.manifest_path = Some(extractor.extract(&result.doc_path, &out)?);
            }
        }
        let mut fetched = self.fetched.write();
        fetched.insert(result.reference.clone(), result.clone());
        // the requested id or URL also works as a handle
        fetched.insert(request.value.trim().to_string(), result.clone());
        Ok(result)
    }

    pub fn lookup(&self, reference: &str) -> Option<FetchResult> {
        self.fetched.read().get(reference.trim()).cloned()
    }

    /// Manifest for a `load_data` argument: a fetch reference, a directory
    /// holding `manifest.json`, or a manifest path.
    pub fn resolve_manifest(&self, input: &str) -> Result<PathBuf> {
        let input = input.trim();
        if let Some(found) = self.lookup(input) {
            return found
                .manifest_path
                .ok_or_else(|| Error::NotFound(format!("{input} was fetched but has no extracted bundle")));
        }
        resolve_manifest_path(input)
    }
}

pub fn resolve_manifest_path(input: &str) -> Result<PathBuf> {
    let path = Path::new(input.trim());
    if path.is_dir() {
        return Ok(path.join("manifest.json"));
    }
    if path.is_file() {
        return Ok(path.to_path_buf());
    }
    Err(Error::NotFound(input.trim().to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn request_parsing() {
        let r = FetchRequest::parse("arxiv_id 2501.00001").unwrap();
        assert_eq!((r.kind, r.value.as_str()), (FetchKind::ArxivId, "2501.00001"));
        assert_eq!(FetchRequest::parse("https://x.org/a.pdf").unwrap().kind, FetchKind::Url);
        assert_eq!(FetchRequest::parse("fixture-001").unwrap().kind, FetchKind::ArxivId);
        assert_eq!(
            FetchRequest::parse("low power bandgap").unwrap().kind,
            FetchKind::TitleQuery
        );
        assert_eq!(
            FetchRequest::parse("title: chopper amplifiers").unwrap().kind,
            FetchKind::TitleQuery
        );
        assert!(FetchRequest::parse("  ").is_err());
    }

    fn fixture_root() -> tempfile::TempDir {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("p1.pdf"), b"%PDF-1.4 one").unwrap();
        fs::write(dir.path().join("p2.pdf"), b"%PDF-1.4 two").unwrap();
        fs::create_dir(dir.path().join("p1")).unwrap();
        fs::write(
            dir.path().join("p1/manifest.json"),
            r#"{"doc_id":"p1","title":"A Quiet Oscillator","pages":["text"]}"#,
        )
        .unwrap();
        dir
    }

    #[test]
    fn local_fetch_with_and_without_sidecar() {
        let root = fixture_root();
        let dest = tempfile::tempdir().unwrap();
        let f = Fetcher::new(Box::new(LocalFixtureFetcher::new(root.path())), dest.path());

        let r = f.fetch(&FetchRequest::parse("p1").unwrap()).unwrap();
        assert!(r.needs_extraction);
        assert_eq!(f.resolve_manifest("p1").unwrap(), r.manifest_path.clone().unwrap());
        assert_eq!(r.bytes, 12);
        assert!(r.doc_path.starts_with(dest.path()));
        assert_eq!(fs::read(&r.doc_path).unwrap(), b"%PDF-1.4 one");
        assert_eq!(
            f.resolve_manifest(&r.reference).unwrap(),
            r.manifest_path.clone().unwrap()
        );
        assert!(r.manifest_path.unwrap().is_file());

        let r2 = f
            .fetch(&FetchRequest::parse("url https://mirror/p2.pdf").unwrap())
            .unwrap();
        assert!(r2.needs_extraction && r2.manifest_path.is_none());
        assert_eq!(r2.source_uri, "https://mirror/p2.pdf");
        assert_ne!(r.reference, r2.reference);
        assert!(f.resolve_manifest(&r2.reference).is_err());

        let r3 = f
            .fetch(&FetchRequest::parse("title_query quiet oscillator").unwrap())
            .unwrap();
        assert_eq!(r3.reference, r.reference);

        assert_eq!(
            f.fetch(&FetchRequest::parse("arxiv_id nope").unwrap())
                .unwrap_err()
                .code(),
            "NotFound(nope)"
        );
        assert!(f.fetch(&FetchRequest::parse("arxiv_id ../p1").unwrap()).is_err());
    }

    #[test]
    fn http_title_query_is_unsupported() {
        let dest = tempfile::tempdir().unwrap();
        let err = HttpFetcher::new(DEFAULT_ARXIV_TEMPLATE, 1)
            .fetch(&FetchRequest::parse("title_query x").unwrap(), dest.path())
            .unwrap_err();
        assert_eq!(err.code(), "UnsupportedKind(title_query)");
    }

    #[test]
    fn command_extractor_runs_program() {
        let dir = tempfile::tempdir().unwrap();
        let script = dir.path().join("ex.sh");
        fs::write(&script, "#!/bin/sh\necho '{}' > \"$2/manifest.json\"\n").unwrap();
        let ex = CommandExtractor {
            command: format!("sh {}", script.display()),
        };
        let out = dir.path().join("out");
        let m = ex.extract(Path::new("/dev/null"), &out).unwrap();
        assert_eq!(m, out.join("manifest.json"));
        let bad = CommandExtractor {
            command: "false".into(),
        };
        assert!(bad.extract(Path::new("/dev/null"), &out).is_err());
    }
}
