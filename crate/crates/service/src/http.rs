//! HTTP routes. Agent sessions stream as server-sent events:
//! `event: step` per step, then one `event: final` with the transcript, or
//! `event: error` when the model provider fails.

use std::convert::Infallible;
use std::path::Path;

use axum::body::Bytes;
use axum::extract::{Multipart, Query, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::sse::{Event, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use percent_encoding::{utf8_percent_encode, NON_ALPHANUMERIC};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio_stream::wrappers::UnboundedReceiverStream;
use tokio_stream::StreamExt as _;
use tower_http::cors::{AllowOrigin, Any, CorsLayer};

use muallm_core::agent::{Termination, Transcript};
use muallm_core::corpus::load_bundle;
use muallm_core::fetch::resolve_manifest_path;
use muallm_core::index::{Modality, SearchHit};
use muallm_core::netlist::{generate_from, DetectionsFile, GrayImage, NetlistConfig};
use muallm_core::runtime::Runtime;
use muallm_core::Error;

use crate::state::{limits, tool_context, AppState};

pub const DEFAULT_SEARCH_K: usize = 10;

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: String,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self {
            status,
            code: code.into(),
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "BadRequest", message)
    }

    fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "Internal", message)
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::WriterBusy => StatusCode::CONFLICT,
            Error::NotFound(_) => StatusCode::NOT_FOUND,
            Error::Provider(_) | Error::ChunkProvider { .. } | Error::Network { .. } => StatusCode::BAD_GATEWAY,
            Error::CorruptIndex(_) => StatusCode::SERVICE_UNAVAILABLE,
            _ => StatusCode::BAD_REQUEST,
        };
        Self::new(status, &e.code(), e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (
            self.status,
            Json(json!({ "error": self.code, "message": self.message })),
        )
            .into_response()
    }
}

fn runtime(state: &AppState) -> Result<&Runtime, ApiError> {
    state
        .runtime
        .as_ref()
        .map_err(|e| ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "IndexUnavailable", e.clone()))
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> T + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(format!("worker failed: {e}")))
}

pub fn router(state: AppState) -> Router {
    let cors = cors_layer(&state.config.cors_allowed_origins);
    let app = Router::new()
        .route("/api/health", get(health))
        .route("/api/query", post(query))
        .route("/api/search", get(search))
        .route("/api/image/{record_id}", get(image))
        .route("/api/ingest", post(ingest))
        .route("/api/netlist", post(netlist))
        .route("/api/sessions/{id}", get(session))
        .with_state(state);
    match cors {
        Some(layer) => app.layer(layer),
        None => app,
    }
}

fn cors_layer(origins: &[String]) -> Option<CorsLayer> {
    if origins.is_empty() {
        return None;
    }
    let allow = if origins.iter().any(|o| o == "*") {
        AllowOrigin::from(Any)
    } else {
        AllowOrigin::list(origins.iter().filter_map(|o| HeaderValue::from_str(o).ok()))
    };
    Some(
        CorsLayer::new()
            .allow_origin(allow)
            .allow_methods(Any)
            .allow_headers(Any),
    )
}

async fn health(State(state): State<AppState>) -> Response {
    match &state.runtime {
        Ok(rt) => Json(json!({ "status": "ok", "records": rt.index.read().len() })).into_response(),
        Err(e) => ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "IndexUnavailable", e.clone()).into_response(),
    }
}

#[derive(Debug, Default, Deserialize)]
pub struct SessionOpts {
    pub max_steps: Option<usize>,
}

#[derive(Debug, Deserialize)]
pub struct QueryRequest {
    #[serde(default)]
    pub question: String,
    #[serde(default)]
    pub session_opts: Option<SessionOpts>,
}

/// Payload of `event: error`.
#[derive(Debug, Serialize, Deserialize)]
pub struct ErrorEvent {
    pub message: String,
    pub transcript: Option<Transcript>,
}

async fn query(State(state): State<AppState>, Json(req): Json<QueryRequest>) -> Result<Response, ApiError> {
    let question = req.question.trim().to_string();
    if question.is_empty() {
        return Err(ApiError::bad_request("question is empty"));
    }
    let rt = runtime(&state)?.clone();
    let chat = state.chat.session_chat().map_err(ApiError::from)?;
    let mut lim = limits(&state.config);
    if let Some(n) = req.session_opts.and_then(|o| o.max_steps) {
        if n == 0 {
            return Err(ApiError::bad_request("session_opts.max_steps must be positive"));
        }
        lim.max_steps = n.min(lim.max_steps);
    }

    let (tx, rx) = tokio::sync::mpsc::unbounded_channel::<Event>();
    let tools = tool_context(&rt, &state.config);
    let sessions = state.sessions.clone();
    tokio::task::spawn_blocking(move || {
        let transcript = tools.run_agent(&question, chat.as_ref(), &lim, &mut |step| {
            // a closed stream means the client left; the session still finishes and is saved
            let _ = tx.send(json_event("step", step));
        });
        if let Err(e) = sessions.save(&transcript) {
            log::warn!("could not save session {}: {e}", transcript.session_id);
        }
        let last = if transcript.terminated_by == Termination::Error {
            let message = transcript.error.clone().unwrap_or_else(|| "session failed".into());
            json_event(
                "error",
                &ErrorEvent {
                    message,
                    transcript: Some(transcript),
                },
            )
        } else {
            json_event("final", &transcript)
        };
        let _ = tx.send(last);
    });
    let stream = UnboundedReceiverStream::new(rx).map(Ok::<_, Infallible>);
    Ok(Sse::new(stream).into_response())
}

fn json_event<T: Serialize>(name: &str, payload: &T) -> Event {
    let data = serde_json::to_string(payload).expect("event payloads serialize");
    Event::default().event(name).data(data)
}

#[derive(Debug, Deserialize)]
pub struct SearchParams {
    pub q: Option<String>,
    pub k: Option<String>,
}

/// A search hit plus, for figures, where to fetch the image.
#[derive(Debug, Serialize, Deserialize)]
pub struct ApiHit {
    #[serde(flatten)]
    pub hit: SearchHit,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub image_url: Option<String>,
}

pub fn image_url(record_id: &str) -> String {
    format!("/api/image/{}", utf8_percent_encode(record_id, NON_ALPHANUMERIC))
}

async fn search(State(state): State<AppState>, Query(p): Query<SearchParams>) -> Result<Json<Vec<ApiHit>>, ApiError> {
    let q = p.q.unwrap_or_default().trim().to_string();
    if q.is_empty() {
        return Err(ApiError::bad_request("missing query parameter q"));
    }
    let k = match p.k.as_deref() {
        None => DEFAULT_SEARCH_K,
        Some(raw) => raw
            .trim()
            .parse::<usize>()
            .map_err(|_| ApiError::bad_request(format!("k must be a positive integer, got `{raw}`")))?,
    };
    if k == 0 {
        return Err(ApiError::bad_request("k must be at least 1"));
    }
    let rt = runtime(&state)?.clone();
    let outcome = blocking(move || rt.engine.search(&q)).await??;
    for w in &outcome.warnings {
        log::warn!("search: {w}");
    }
    let hits = outcome
        .hits
        .into_iter()
        .take(k)
        .map(|hit| ApiHit {
            image_url: (hit.modality == Modality::Image).then(|| image_url(&hit.record_id)),
            hit,
        })
        .collect();
    Ok(Json(hits))
}

fn content_type(path: &Path) -> &'static str {
    match path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .as_deref()
    {
        Some("png") => "image/png",
        Some("jpg" | "jpeg") => "image/jpeg",
        Some("gif") => "image/gif",
        Some("svg") => "image/svg+xml",
        Some("webp") => "image/webp",
        Some("pgm") => "image/x-portable-graymap",
        _ => "application/octet-stream",
    }
}

async fn image(
    State(state): State<AppState>,
    axum::extract::Path(record_id): axum::extract::Path<String>,
) -> Result<Response, ApiError> {
    let rt = runtime(&state)?;
    let path = {
        let index = rt.index.read();
        let record = index
            .get(&record_id)
            .filter(|r| r.modality == Modality::Image)
            .ok_or_else(|| {
                ApiError::new(
                    StatusCode::NOT_FOUND,
                    "NotFound",
                    format!("no image record {record_id}"),
                )
            })?;
        record.metadata.image_path.clone().ok_or_else(|| {
            ApiError::new(
                StatusCode::NOT_FOUND,
                "NotFound",
                format!("record {record_id} has no image file"),
            )
        })?
    };
    let path = std::path::PathBuf::from(path);
    let bytes = tokio::fs::read(&path)
        .await
        .map_err(|e| ApiError::new(StatusCode::NOT_FOUND, "NotFound", format!("{}: {e}", path.display())))?;
    Ok(([(header::CONTENT_TYPE, content_type(&path))], bytes).into_response())
}

#[derive(Debug, Deserialize)]
pub struct IngestRequest {
    pub manifest_path: Option<String>,
    #[serde(alias = "reference")]
    pub r#ref: Option<String>,
}

async fn ingest(State(state): State<AppState>, Json(req): Json<IngestRequest>) -> Result<Response, ApiError> {
    let rt = runtime(&state)?.clone();
    let report = blocking(move || -> Result<_, ApiError> {
        let manifest = match (req.manifest_path, req.r#ref) {
            (Some(p), None) => resolve_manifest_path(&p)?,
            (None, Some(r)) => match &rt.fetcher {
                Some(f) => f.resolve_manifest(&r)?,
                None => resolve_manifest_path(&r)?,
            },
            _ => return Err(ApiError::bad_request("give exactly one of manifest_path or ref")),
        };
        let bundle = load_bundle(&manifest)?;
        Ok(rt.ingest.try_ingest(&bundle)?)
    })
    .await??;
    Ok(Json(report).into_response())
}

async fn netlist(State(state): State<AppState>, mut form: Multipart) -> Result<Response, ApiError> {
    let mut image: Option<(Bytes, String)> = None;
    let mut detections: Option<Bytes> = None;
    while let Some(field) = form
        .next_field()
        .await
        .map_err(|e| ApiError::bad_request(format!("bad multipart body: {e}")))?
    {
        let name = field.name().unwrap_or_default().to_string();
        let file_name = field.file_name().unwrap_or_default().to_string();
        let data = field
            .bytes()
            .await
            .map_err(|e| ApiError::bad_request(format!("bad multipart field {name}: {e}")))?;
        match name.as_str() {
            "image" => image = Some((data, file_name)),
            "detections" => detections = Some(data),
            _ => {}
        }
    }
    let (image_bytes, file_name) = image.ok_or_else(|| ApiError::bad_request("missing multipart field `image`"))?;
    let detector = state.detector.clone();
    let text = blocking(move || -> Result<String, ApiError> {
        let bad =
            |e: muallm_core::netlist::NetlistError| ApiError::new(StatusCode::BAD_REQUEST, "Netlist", e.to_string());
        let img = GrayImage::decode_pgm(&image_bytes).map_err(bad)?;
        let (dets, named) = match (detections, detector) {
            (Some(raw), _) => {
                let text = String::from_utf8_lossy(&raw);
                let file = DetectionsFile::parse(&text).map_err(bad)?;
                (file.detections, file.image)
            }
            (None, Some(d)) => (d.detect(&img).map_err(bad)?, String::new()),
            (None, None) => {
                return Err(ApiError::bad_request(
                    "missing multipart field `detections` and no detector configured",
                ))
            }
        };
        let source = if named.is_empty() { file_name } else { named };
        let nl = generate_from(&img, &dets, &source, &NetlistConfig::default()).map_err(bad)?;
        Ok(nl.to_spice())
    })
    .await??;
    Ok(([(header::CONTENT_TYPE, "text/plain; charset=utf-8")], text).into_response())
}

async fn session(
    State(state): State<AppState>,
    axum::extract::Path(id): axum::extract::Path<String>,
) -> Result<Json<Transcript>, ApiError> {
    let sessions = state.sessions.clone();
    let id2 = id.clone();
    blocking(move || sessions.load(&id2))
        .await?
        .map(Json)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "NotFound", format!("no session {id}")))
}
