use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Failure reported by a chat, embedding, rerank or fetch backend.
#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("{provider}: {message}")]
pub struct ProviderError {
    pub provider: String,
    pub message: String,
    pub retryable: bool,
}

impl ProviderError {
    pub fn new(provider: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            provider: provider.into(),
            message: message.into(),
            retryable: false,
        }
    }

    pub fn retryable(mut self) -> Self {
        self.retryable = true;
        self
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("missing field `{0}`")]
    MissingField(String),
    #[error("invalid field `{field}`: {reason}")]
    InvalidField { field: String, reason: String },
    #[error("unreadable image {}: {reason}", path.display())]
    UnreadableImage { path: PathBuf, reason: String },
    #[error("duplicate image id `{0}`")]
    DuplicateImageId(String),
    #[error("document `{0}` has no text")]
    EmptyDocument(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("chunk {chunk_id}: {source}")]
    ChunkProvider {
        chunk_id: String,
        #[source]
        source: ProviderError,
    },
    #[error("vector dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("corrupt index: {0}")]
    CorruptIndex(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("unsupported fetch kind: {0}")]
    UnsupportedKind(String),
    #[error("network error: {message}")]
    Network { message: String, retryable: bool },
    #[error("index writer busy")]
    WriterBusy,
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Netlist(#[from] muallm_netlist::NetlistError),
}

impl Error {
    /// Short machine-readable form, e.g. `MissingField(doc_id)`.
    pub fn code(&self) -> String {
        match self {
            Error::MissingField(f) => format!("MissingField({f})"),
            Error::InvalidField { field, .. } => format!("InvalidField({field})"),
            Error::UnreadableImage { path, .. } => format!("UnreadableImage({})", path.display()),
            Error::DuplicateImageId(id) => format!("DuplicateImageId({id})"),
            Error::EmptyDocument(id) => format!("EmptyDocument({id})"),
            Error::InvalidConfig(_) => "InvalidConfig".into(),
            Error::Provider(e) | Error::ChunkProvider { source: e, .. } => {
                format!("ProviderError({})", e.provider)
            }
            Error::DimMismatch { expected, got } => format!("DimMismatch({expected},{got})"),
            Error::EmptyBatch => "EmptyBatch".into(),
            Error::CorruptIndex(_) => "CorruptIndex".into(),
            Error::NotFound(what) => format!("NotFound({what})"),
            Error::UnsupportedKind(k) => format!("UnsupportedKind({k})"),
            Error::Network { .. } => "NetworkError".into(),
            Error::WriterBusy => "WriterBusy".into(),
            Error::Io { .. } => "Io".into(),
            Error::Json(_) => "Json".into(),
            Error::Netlist(_) => "Netlist".into(),
        }
    }

    pub fn is_retryable(&self) -> bool {
        match self {
            Error::Provider(e) | Error::ChunkProvider { source: e, .. } => e.retryable,
            Error::Network { retryable, .. } => *retryable,
            _ => false,
        }
    }
}

pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Error {
    Error::Io {
        path: path.into(),
        source,
    }
}
