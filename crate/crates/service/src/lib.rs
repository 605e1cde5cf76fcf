//! HTTP service and CLI plumbing over `muallm-core`: layered configuration,
//! provider wiring, and the JSON/SSE routes the web client consumes.

pub mod config;
pub mod http;
pub mod state;

pub use config::{ConfigError, Layers, ProviderMode, ServiceConfig};
pub use http::router;
pub use state::AppState;
