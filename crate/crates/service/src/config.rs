//! Service configuration, layered as defaults < file < environment < flags.
//!
//! Every setting has a dotted key (`chat.mode`, `limits.max_steps`). The
//! file is TOML; nested tables flatten to dotted keys. The environment
//! variable for a key is `MUALLM_` plus the key upper-cased with dots as
//! underscores (`MUALLM_CHAT_MODE`).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use muallm_core::agent::{DEFAULT_MAX_STEPS, DEFAULT_MAX_TOOL_OUTPUT_CHARS};
use muallm_core::cost::DEFAULT_RETRIEVAL_CONTEXT_TOKENS;
use muallm_core::embed::FALLBACK_DIM;
use muallm_core::provider::RemoteConfig;
use muallm_core::retrieve::FusionConfig;
use muallm_core::tools::DEFAULT_TOOL_HITS;
use thiserror::Error;

pub const ENV_PREFIX: &str = "MUALLM_";

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("bad value for `{key}`: {reason}")]
    BadValue { key: String, reason: String },
    #[error("cannot read config file {path}: {reason}")]
    File { path: PathBuf, reason: String },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProviderMode {
    Remote,
    Fallback,
    Scripted,
}

impl ProviderMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            ProviderMode::Remote => "remote",
            ProviderMode::Fallback => "fallback",
            ProviderMode::Scripted => "scripted",
        }
    }
}

impl std::str::FromStr for ProviderMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "remote" => Ok(ProviderMode::Remote),
            "fallback" => Ok(ProviderMode::Fallback),
            "scripted" => Ok(ProviderMode::Scripted),
            other => Err(format!("`{other}` is not one of remote, fallback, scripted")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProviderSettings {
    pub mode: ProviderMode,
    pub endpoint: Option<String>,
    pub api_key_env: Option<String>,
    pub model: Option<String>,
    /// Scripted chat: a JSONL script. Scripted detector: a detections file.
    pub script: Option<PathBuf>,
    pub timeout_secs: u64,
}

impl Default for ProviderSettings {
    fn default() -> Self {
        Self {
            mode: ProviderMode::Fallback,
            endpoint: None,
            api_key_env: None,
            model: None,
            script: None,
            timeout_secs: 60,
        }
    }
}

impl ProviderSettings {
    pub fn remote_config(&self) -> RemoteConfig {
        RemoteConfig {
            endpoint: self.endpoint.clone().unwrap_or_default(),
            api_key_env: self.api_key_env.clone().unwrap_or_default(),
            model: self.model.clone(),
            timeout_secs: self.timeout_secs,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LimitsConfig {
    pub max_steps: usize,
    pub max_tool_output_chars: usize,
    /// Token budget of the context block in rag-mode evaluation.
    pub context_tokens: usize,
    /// Hits shown to the agent per search.
    pub max_hits: usize,
}

impl Default for LimitsConfig {
    fn default() -> Self {
        Self {
            max_steps: DEFAULT_MAX_STEPS,
            max_tool_output_chars: DEFAULT_MAX_TOOL_OUTPUT_CHARS,
            context_tokens: DEFAULT_RETRIEVAL_CONTEXT_TOKENS,
            max_hits: DEFAULT_TOOL_HITS,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServiceConfig {
    pub bind_addr: String,
    /// `None` keeps the index in memory only.
    pub db_path: Option<PathBuf>,
    pub cache_path: Option<PathBuf>,
    pub sessions_dir: PathBuf,
    pub download_dir: PathBuf,
    pub fixture_dir: Option<PathBuf>,
    pub extractor_cmd: Option<String>,
    pub chat: ProviderSettings,
    pub embed: ProviderSettings,
    pub embed_dim: usize,
    pub rerank: ProviderSettings,
    pub fetch: ProviderSettings,
    pub detector: ProviderSettings,
    pub limits: LimitsConfig,
    pub fusion: FusionConfig,
    pub cors_allowed_origins: Vec<String>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            bind_addr: "127.0.0.1:8080".into(),
            db_path: Some("muallm.muix".into()),
            cache_path: Some("muallm-cache.jsonl".into()),
            sessions_dir: "sessions".into(),
            download_dir: "downloads".into(),
            fixture_dir: None,
            extractor_cmd: None,
            chat: ProviderSettings::default(),
            embed: ProviderSettings::default(),
            embed_dim: FALLBACK_DIM,
            rerank: ProviderSettings::default(),
            fetch: ProviderSettings::default(),
            detector: ProviderSettings::default(),
            limits: LimitsConfig::default(),
            fusion: FusionConfig::default(),
            cors_allowed_origins: vec!["*".into()],
        }
    }
}

const PROVIDERS: [&str; 5] = ["chat", "embed", "rerank", "fetch", "detector"];
const PROVIDER_FIELDS: [&str; 6] = ["mode", "endpoint", "api_key_env", "model", "script", "timeout_secs"];
const PLAIN_KEYS: [&str; 17] = [
    "bind_addr",
    "db_path",
    "cache_path",
    "sessions_dir",
    "download_dir",
    "fixture_dir",
    "extractor_cmd",
    "embed.dim",
    "limits.max_steps",
    "limits.max_tool_output_chars",
    "limits.context_tokens",
    "limits.max_hits",
    "fusion.w_sem",
    "fusion.w_kw",
    "fusion.rrf_k",
    "fusion.prefuse_k",
    "fusion.final_k",
];

/// Every settable key.
pub fn keys() -> Vec<String> {
    let mut out: Vec<String> = PLAIN_KEYS.iter().map(|k| k.to_string()).collect();
    out.push("cors_allowed_origins".into());
    for p in PROVIDERS {
        for f in PROVIDER_FIELDS {
            out.push(format!("{p}.{f}"));
        }
    }
    out
}

pub fn env_var_for(key: &str) -> String {
    format!("{ENV_PREFIX}{}", key.to_ascii_uppercase().replace('.', "_"))
}

fn optional_path(v: &str) -> Option<PathBuf> {
    (!v.trim().is_empty()).then(|| PathBuf::from(v.trim()))
}

fn optional_string(v: &str) -> Option<String> {
    (!v.trim().is_empty()).then(|| v.trim().to_string())
}

fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    v.trim().parse().map_err(|e: T::Err| ConfigError::BadValue {
        key: key.into(),
        reason: e.to_string(),
    })
}

fn show_path(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

impl ServiceConfig {
    fn provider_mut(&mut self, name: &str) -> Option<&mut ProviderSettings> {
        match name {
            "chat" => Some(&mut self.chat),
            "embed" => Some(&mut self.embed),
            "rerank" => Some(&mut self.rerank),
            "fetch" => Some(&mut self.fetch),
            "detector" => Some(&mut self.detector),
            _ => None,
        }
    }

    fn provider(&self, name: &str) -> Option<&ProviderSettings> {
        match name {
            "chat" => Some(&self.chat),
            "embed" => Some(&self.embed),
            "rerank" => Some(&self.rerank),
            "fetch" => Some(&self.fetch),
            "detector" => Some(&self.detector),
            _ => None,
        }
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        match key {
            "bind_addr" => self.bind_addr = value.trim().to_string(),
            "db_path" => self.db_path = optional_path(value),
            "cache_path" => self.cache_path = optional_path(value),
            "sessions_dir" => self.sessions_dir = PathBuf::from(value.trim()),
            "download_dir" => self.download_dir = PathBuf::from(value.trim()),
            "fixture_dir" => self.fixture_dir = optional_path(value),
            "extractor_cmd" => self.extractor_cmd = optional_string(value),
            "embed.dim" => self.embed_dim = parse(key, value)?,
            "limits.max_steps" => self.limits.max_steps = parse(key, value)?,
            "limits.max_tool_output_chars" => self.limits.max_tool_output_chars = parse(key, value)?,
            "limits.context_tokens" => self.limits.context_tokens = parse(key, value)?,
            "limits.max_hits" => self.limits.max_hits = parse(key, value)?,
            "fusion.w_sem" => self.fusion.w_semantic = parse(key, value)?,
            "fusion.w_kw" => self.fusion.w_keyword = parse(key, value)?,
            "fusion.rrf_k" => self.fusion.rrf_k = parse(key, value)?,
            "fusion.prefuse_k" => self.fusion.prefuse_k = parse(key, value)?,
            "fusion.final_k" => self.fusion.final_k = parse(key, value)?,
            "cors_allowed_origins" => {
                self.cors_allowed_origins = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(str::to_string)
                    .collect()
            }
            _ => {
                let (p, field) = key.split_once('.').ok_or_else(|| ConfigError::UnknownKey(key.into()))?;
                let settings = self
                    .provider_mut(p)
                    .ok_or_else(|| ConfigError::UnknownKey(key.into()))?;
                match field {
                    "mode" => {
                        settings.mode = value.parse().map_err(|reason| ConfigError::BadValue {
                            key: key.into(),
                            reason,
                        })?
                    }
                    "endpoint" => settings.endpoint = optional_string(value),
                    "api_key_env" => settings.api_key_env = optional_string(value),
                    "model" => settings.model = optional_string(value),
                    "script" => settings.script = optional_path(value),
                    "timeout_secs" => settings.timeout_secs = parse(key, value)?,
                    _ => return Err(ConfigError::UnknownKey(key.into())),
                }
            }
        }
        Ok(())
    }

    /// The current value of `key` in the form [`Self::set`] accepts.
    pub fn get(&self, key: &str) -> Result<String, ConfigError> {
        Ok(match key {
            "bind_addr" => self.bind_addr.clone(),
            "db_path" => show_path(&self.db_path),
            "cache_path" => show_path(&self.cache_path),
            "sessions_dir" => self.sessions_dir.display().to_string(),
            "download_dir" => self.download_dir.display().to_string(),
            "fixture_dir" => show_path(&self.fixture_dir),
            "extractor_cmd" => self.extractor_cmd.clone().unwrap_or_default(),
            "embed.dim" => self.embed_dim.to_string(),
            "limits.max_steps" => self.limits.max_steps.to_string(),
            "limits.max_tool_output_chars" => self.limits.max_tool_output_chars.to_string(),
            "limits.context_tokens" => self.limits.context_tokens.to_string(),
            "limits.max_hits" => self.limits.max_hits.to_string(),
            "fusion.w_sem" => self.fusion.w_semantic.to_string(),
            "fusion.w_kw" => self.fusion.w_keyword.to_string(),
            "fusion.rrf_k" => self.fusion.rrf_k.to_string(),
            "fusion.prefuse_k" => self.fusion.prefuse_k.to_string(),
            "fusion.final_k" => self.fusion.final_k.to_string(),
            "cors_allowed_origins" => self.cors_allowed_origins.join(","),
            _ => {
                let (p, field) = key.split_once('.').ok_or_else(|| ConfigError::UnknownKey(key.into()))?;
                let s = self.provider(p).ok_or_else(|| ConfigError::UnknownKey(key.into()))?;
                match field {
                    "mode" => s.mode.as_str().to_string(),
                    "endpoint" => s.endpoint.clone().unwrap_or_default(),
                    "api_key_env" => s.api_key_env.clone().unwrap_or_default(),
                    "model" => s.model.clone().unwrap_or_default(),
                    "script" => show_path(&s.script),
                    "timeout_secs" => s.timeout_secs.to_string(),
                    _ => return Err(ConfigError::UnknownKey(key.into())),
                }
            }
        })
    }

    /// Checks cross-field rules. `env` looks up environment variables so
    /// callers can test without touching the process environment.
    pub fn validate(&self, env: &dyn Fn(&str) -> Option<String>) -> Result<(), ConfigError> {
        for name in PROVIDERS {
            let s = self.provider(name).expect("known provider");
            match s.mode {
                ProviderMode::Remote if name == "fetch" => {}
                ProviderMode::Remote => {
                    if s.endpoint.is_none() {
                        return Err(ConfigError::Invalid(format!(
                            "{name}.mode = remote needs {name}.endpoint"
                        )));
                    }
                    let var = s.api_key_env.as_deref().ok_or_else(|| {
                        ConfigError::Invalid(format!("{name}.mode = remote needs {name}.api_key_env"))
                    })?;
                    if env(var).is_none_or(|v| v.is_empty()) {
                        return Err(ConfigError::Invalid(format!(
                            "{name}.mode = remote but ${var} is not set"
                        )));
                    }
                }
                ProviderMode::Scripted if (name == "chat" || name == "detector") && s.script.is_none() => {
                    return Err(ConfigError::Invalid(format!(
                        "{name}.mode = scripted needs {name}.script"
                    )));
                }
                _ => {}
            }
        }
        if self.limits.max_steps == 0 || self.limits.max_hits == 0 {
            return Err(ConfigError::Invalid(
                "limits.max_steps and limits.max_hits must be positive".into(),
            ));
        }
        if self.embed_dim == 0 {
            return Err(ConfigError::Invalid("embed.dim must be positive".into()));
        }
        self.fusion.validate().map_err(|e| ConfigError::Invalid(e.to_string()))
    }
}

/// Raw key/value settings from each source.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Layers {
    pub file: BTreeMap<String, String>,
    pub env: BTreeMap<String, String>,
    pub flags: BTreeMap<String, String>,
}

impl Layers {
    pub fn resolve(&self) -> Result<ServiceConfig, ConfigError> {
        let mut cfg = ServiceConfig::default();
        for layer in [&self.file, &self.env, &self.flags] {
            for (k, v) in layer {
                cfg.set(k, v)?;
            }
        }
        Ok(cfg)
    }
}

/// Flattens a TOML document into dotted keys. Arrays join with commas.
pub fn parse_file(text: &str) -> Result<BTreeMap<String, String>, ConfigError> {
    let table: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::File {
        path: PathBuf::new(),
        reason: e.to_string(),
    })?;
    let mut out = BTreeMap::new();
    flatten("", &table, &mut out)?;
    Ok(out)
}

fn flatten(prefix: &str, table: &toml::Table, out: &mut BTreeMap<String, String>) -> Result<(), ConfigError> {
    for (k, v) in table {
        let key = if prefix.is_empty() {
            k.clone()
        } else {
            format!("{prefix}.{k}")
        };
        match v {
            toml::Value::Table(t) => flatten(&key, t, out)?,
            toml::Value::String(s) => {
                out.insert(key, s.clone());
            }
            toml::Value::Array(items) => {
                let parts: Vec<String> = items
                    .iter()
                    .map(|i| match i {
                        toml::Value::String(s) => s.clone(),
                        other => other.to_string(),
                    })
                    .collect();
                out.insert(key, parts.join(","));
            }
            other => {
                out.insert(key, other.to_string());
            }
        }
    }
    Ok(())
}

pub fn read_file(path: &Path) -> Result<BTreeMap<String, String>, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::File {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    parse_file(&text).map_err(|e| match e {
        ConfigError::File { reason, .. } => ConfigError::File {
            path: path.to_path_buf(),
            reason,
        },
        other => other,
    })
}

/// Settings found in the environment, keyed by config key.
pub fn from_env(env: &dyn Fn(&str) -> Option<String>) -> BTreeMap<String, String> {
    keys()
        .into_iter()
        .filter_map(|k| env(&env_var_for(&k)).map(|v| (k, v)))
        .collect()
}
