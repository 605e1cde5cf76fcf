//! Backend abstractions for chat, embedding and rerank models, with offline
//! implementations (fallback, scripted) and JSON-over-HTTP remote clients.

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{io, Error, ProviderError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
    /// Inline images as data URIs.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub images: Vec<String>,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self::new(Role::System, content)
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self::new(Role::User, content)
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self::new(Role::Assistant, content)
    }

    fn new(role: Role, content: impl Into<String>) -> Self {
        Self {
            role,
            content: content.into(),
            images: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub messages: Vec<ChatMessage>,
    /// Deterministic answer the caller would accept when no model is
    /// available. The offline provider returns it verbatim.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fallback: Option<String>,
}

impl ChatRequest {
    pub fn new(messages: Vec<ChatMessage>) -> Self {
        Self {
            messages,
            fallback: None,
        }
    }

    pub fn with_fallback(mut self, text: impl Into<String>) -> Self {
        self.fallback = Some(text.into());
        self
    }
}

pub trait ChatProvider: Send + Sync {
    fn name(&self) -> &str;
    fn complete(&self, request: &ChatRequest) -> std::result::Result<String, ProviderError>;
}

pub trait EmbeddingProvider: Send + Sync {
    fn name(&self) -> &str;
    fn dim(&self) -> usize;
    /// One raw (not necessarily normalized) vector per input text.
    fn embed(&self, texts: &[String]) -> std::result::Result<Vec<Vec<f64>>, ProviderError>;
}

pub trait RerankProvider: Send + Sync {
    fn name(&self) -> &str;
    /// Indices into `documents`, most relevant first.
    fn rerank(&self, query: &str, documents: &[String]) -> std::result::Result<Vec<usize>, ProviderError>;
}

/// Offline chat: answers with the request's fallback text.
#[derive(Debug, Default, Clone, Copy)]
pub struct FallbackChat;

impl ChatProvider for FallbackChat {
    fn name(&self) -> &str {
        "fallback"
    }

    fn complete(&self, request: &ChatRequest) -> std::result::Result<String, ProviderError> {
        request
            .fallback
            .clone()
            .ok_or_else(|| ProviderError::new("fallback", "request carries no fallback text"))
    }
}

/// Keeps the fused order.
#[derive(Debug, Default, Clone, Copy)]
pub struct IdentityReranker;

impl RerankProvider for IdentityReranker {
    fn name(&self) -> &str {
        "identity"
    }

    fn rerank(&self, _query: &str, documents: &[String]) -> std::result::Result<Vec<usize>, ProviderError> {
        Ok((0..documents.len()).collect())
    }
}

/// Plays back a fixed list of model outputs, one per call.
#[derive(Debug)]
pub struct ScriptedChat {
    outputs: Vec<String>,
    cycle: bool,
    next: AtomicUsize,
    requests: Mutex<Vec<ChatRequest>>,
}

#[derive(Deserialize)]
struct ScriptLine {
    #[serde(default)]
    turn: Option<usize>,
    output: String,
}

impl ScriptedChat {
    pub fn new(outputs: Vec<String>) -> Self {
        Self {
            outputs,
            cycle: false,
            next: AtomicUsize::new(0),
            requests: Mutex::new(Vec::new()),
        }
    }

    /// Repeats the script forever instead of failing once it runs out.
    pub fn cycling(outputs: Vec<String>) -> Self {
        Self {
            cycle: true,
            ..Self::new(outputs)
        }
    }

    /// JSON lines, each either a string or `{"turn": n, "output": "..."}`.
    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut keyed = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let value: Value = serde_json::from_str(line)?;
            let entry = match value {
                Value::String(s) => ScriptLine { turn: None, output: s },
                other => serde_json::from_value(other)?,
            };
            keyed.push((entry.turn.unwrap_or(i + 1), i, entry.output));
        }
        keyed.sort();
        Ok(Self::new(keyed.into_iter().map(|(_, _, o)| o).collect()))
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| io(path, e))?;
        Self::from_jsonl(&text)
    }

    pub fn calls(&self) -> usize {
        self.requests.lock().len()
    }

    pub fn requests(&self) -> Vec<ChatRequest> {
        self.requests.lock().clone()
    }
}

impl ChatProvider for ScriptedChat {
    fn name(&self) -> &str {
        "scripted"
    }

    fn complete(&self, request: &ChatRequest) -> std::result::Result<String, ProviderError> {
        self.requests.lock().push(request.clone());
        let i = self.next.fetch_add(1, Ordering::SeqCst);
        if self.outputs.is_empty() {
            return Err(ProviderError::new("scripted", "empty script"));
        }
        let i = if self.cycle { i % self.outputs.len() } else { i };
        self.outputs.get(i).cloned().ok_or_else(|| {
            ProviderError::new(
                "scripted",
                format!("script exhausted after {} turns", self.outputs.len()),
            )
        })
    }
}

/// Wraps a chat provider and counts calls that reached it.
pub struct CountingChat<P> {
    inner: P,
    calls: AtomicUsize,
}

impl<P: ChatProvider> CountingChat<P> {
    pub fn new(inner: P) -> Self {
        Self {
            inner,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl<P: ChatProvider> ChatProvider for CountingChat<P> {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn complete(&self, request: &ChatRequest) -> std::result::Result<String, ProviderError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.complete(request)
    }
}

/// Connection settings shared by the remote clients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteConfig {
    pub endpoint: String,
    pub api_key_env: String,
    #[serde(default)]
    pub model: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

fn default_timeout() -> u64 {
    60
}

struct HttpClient {
    name: String,
    endpoint: String,
    api_key: String,
    agent: ureq::Agent,
}

impl HttpClient {
    fn new(name: &str, cfg: &RemoteConfig) -> Result<Self> {
        let api_key = std::env::var(&cfg.api_key_env)
            .map_err(|_| Error::InvalidConfig(format!("{name} provider needs ${} to be set", cfg.api_key_env)))?;
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(cfg.timeout_secs.max(1))))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self {
            name: name.to_string(),
            endpoint: cfg.endpoint.clone(),
            api_key,
            agent,
        })
    }

    fn post(&self, body: &Value) -> std::result::Result<Value, ProviderError> {
        let mut resp = self
            .agent
            .post(&self.endpoint)
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .send_json(body)
            .map_err(|e| {
                let retryable = matches!(
                    e,
                    ureq::Error::Timeout(_) | ureq::Error::Io(_) | ureq::Error::ConnectionFailed
                );
                ProviderError {
                    provider: self.name.clone(),
                    message: e.to_string(),
                    retryable,
                }
            })?;
        let status = resp.status().as_u16();
        if status >= 400 {
            let body = resp.body_mut().read_to_string().unwrap_or_default();
            return Err(ProviderError {
                provider: self.name.clone(),
                message: format!("HTTP {status}: {}", body.chars().take(200).collect::<String>()),
                retryable: status == 429 || status >= 500,
            });
        }
        resp.body_mut()
            .read_json::<Value>()
            .map_err(|e| ProviderError::new(self.name.clone(), format!("bad response body: {e}")))
    }

    fn malformed(&self, what: &str) -> ProviderError {
        ProviderError::new(self.name.clone(), format!("malformed response: {what}"))
    }
}

/// Chat-completions style endpoint: `{"model","messages"}` in,
/// `choices[0].message.content` out.
pub struct RemoteChat {
    http: HttpClient,
    model: Option<String>,
}

impl RemoteChat {
    pub fn new(cfg: &RemoteConfig) -> Result<Self> {
        Ok(Self {
            http: HttpClient::new("remote-chat", cfg)?,
            model: cfg.model.clone(),
        })
    }
}

impl ChatProvider for RemoteChat {
    fn name(&self) -> &str {
        "remote-chat"
    }

    fn complete(&self, request: &ChatRequest) -> std::result::Result<String, ProviderError> {
        let messages: Vec<Value> = request
            .messages
            .iter()
            .map(|m| {
                if m.images.is_empty() {
                    json!({"role": m.role, "content": m.content})
                } else {
                    let mut parts = vec![json!({"type": "text", "text": m.content})];
                    parts.extend(
                        m.images
                            .iter()
                            .map(|uri| json!({"type": "image_url", "image_url": {"url": uri}})),
                    );
                    json!({"role": m.role, "content": parts})
                }
            })
            .collect();
        let mut body = json!({ "messages": messages });
        if let Some(model) = &self.model {
            body["model"] = json!(model);
        }
        let resp = self.http.post(&body)?;
        resp.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| self.http.malformed("missing choices[0].message.content"))
    }
}

/// `{"texts":[...]}` in, `{"vectors":[[...]...]}` out.
pub struct RemoteEmbedder {
    http: HttpClient,
    dim: usize,
}

impl RemoteEmbedder {
    pub fn new(cfg: &RemoteConfig, dim: usize) -> Result<Self> {
        Ok(Self {
            http: HttpClient::new("remote-embed", cfg)?,
            dim,
        })
    }
}

impl EmbeddingProvider for RemoteEmbedder {
    fn name(&self) -> &str {
        "remote-embed"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, texts: &[String]) -> std::result::Result<Vec<Vec<f64>>, ProviderError> {
        let resp = self.http.post(&json!({ "texts": texts }))?;
        let vectors = resp
            .get("vectors")
            .cloned()
            .ok_or_else(|| self.http.malformed("missing vectors"))?;
        serde_json::from_value(vectors).map_err(|e| self.http.malformed(&e.to_string()))
    }
}

/// `{"query","documents"}` in, `{"order":[indices]}` out.
pub struct RemoteReranker {
    http: HttpClient,
}

impl RemoteReranker {
    pub fn new(cfg: &RemoteConfig) -> Result<Self> {
        Ok(Self {
            http: HttpClient::new("remote-rerank", cfg)?,
        })
    }
}

impl RerankProvider for RemoteReranker {
    fn name(&self) -> &str {
        "remote-rerank"
    }

    fn rerank(&self, query: &str, documents: &[String]) -> std::result::Result<Vec<usize>, ProviderError> {
        let resp = self.http.post(&json!({ "query": query, "documents": documents }))?;
        let order = resp
            .get("order")
            .cloned()
            .ok_or_else(|| self.http.malformed("missing order"))?;
        serde_json::from_value(order).map_err(|e| self.http.malformed(&e.to_string()))
    }
}

/// Schematic detector behind HTTP: `{"image": <base64 PGM>}` in, a
/// detections file (`{"detections":[...]}`) out.
pub struct RemoteDetector {
    http: HttpClient,
}

impl RemoteDetector {
    pub fn new(cfg: &RemoteConfig) -> Result<Self> {
        Ok(Self {
            http: HttpClient::new("remote-detector", cfg)?,
        })
    }
}

impl muallm_netlist::DetectorProvider for RemoteDetector {
    fn detect(
        &self,
        image: &muallm_netlist::GrayImage,
    ) -> muallm_netlist::Result<Vec<muallm_netlist::ComponentDetection>> {
        use base64::Engine as _;
        let pgm = base64::engine::general_purpose::STANDARD.encode(image.encode_pgm());
        let resp = self
            .http
            .post(&json!({ "image": pgm }))
            .map_err(|e| muallm_netlist::NetlistError::Detector(e.to_string()))?;
        muallm_netlist::DetectionsFile::parse(&resp.to_string()).map(|f| f.detections)
    }
}
