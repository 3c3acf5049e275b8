//! HTTP + server-sent-events front end for preprod sessions.
//!
//! Every payload uses the core crate's JSON serialization. The event stream
//! uses the event kind as the SSE event name, the event sequence number as
//! the SSE id, and the whole event as JSON data; `Last-Event-ID` resumes a
//! dropped stream.

use std::convert::Infallible;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::{FromRequest, Multipart, Path, Query, Request, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::stream::{self, Stream, StreamExt};
use preprod_core::core_agent::UserMessage;
use preprod_core::schema::element_schema;
use preprod_core::session::{BlockEdit, CreateSession, Engine, Session, SessionError};
use preprod_core::{ArtifactKind, AssetRef, BlockId, RequestId, SessionEvent, Stage};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tokio::sync::mpsc;

pub type AppState = Arc<Engine>;

/// Error reply: a stable machine code plus a human-readable detail.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub detail: String,
}

pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, detail: impl Into<String>) -> Self {
        Self {
            status,
            body: ErrorBody {
                error: code.to_string(),
                detail: detail.into(),
            },
        }
    }

    fn bad_request(detail: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad-request", detail)
    }

    fn not_found(detail: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not-found", detail)
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        let (status, code) = match &e {
            SessionError::Busy => (StatusCode::CONFLICT, "busy"),
            SessionError::InvalidSelection(_) => (StatusCode::BAD_REQUEST, "invalid-selection"),
            SessionError::InvalidUpload(_) => (StatusCode::BAD_REQUEST, "invalid-upload"),
            SessionError::NoSuchRequest => (StatusCode::CONFLICT, "no-such-request"),
            SessionError::UnknownSession(_) => (StatusCode::NOT_FOUND, "unknown-session"),
            SessionError::BadBrief => (StatusCode::BAD_REQUEST, "bad-brief"),
            SessionError::Board(_) => (StatusCode::BAD_REQUEST, "invalid-edit"),
            SessionError::Project(_) | SessionError::Io(_) => (StatusCode::INTERNAL_SERVER_ERROR, "io-failure"),
        };
        Self::new(status, code, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionCreated {
    pub session_id: String,
    pub current_stage: Stage,
    pub brief: String,
    /// Events the session already holds; empty for a fresh session.
    pub events: Vec<SessionEvent>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionInfo {
    pub session_id: String,
    pub current_stage: Stage,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub in_flight: Option<RequestId>,
    pub last_seq: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Accepted {
    pub request_id: RequestId,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CancelRequest {
    pub request_id: RequestId,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Acknowledged {
    pub acknowledged: bool,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SaveRequest {
    #[serde(default)]
    pub path: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Saved {
    pub path: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Uploaded {
    pub assets: Vec<AssetRef>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BlockView {
    pub block: preprod_core::Block,
    pub placement: preprod_core::Placement,
}

#[derive(Debug, Clone, Default, Deserialize)]
pub struct EventsQuery {
    #[serde(default)]
    pub from_seq: Option<u64>,
}

pub fn router(engine: Arc<Engine>) -> Router {
    Router::new()
        .route("/sessions", post(create_session).get(list_sessions))
        .route("/sessions/{sid}", get(session_info))
        .route("/sessions/{sid}/project", get(project))
        .route("/sessions/{sid}/messages", post(post_message))
        .route("/sessions/{sid}/uploads", post(upload))
        .route("/sessions/{sid}/cancel", post(cancel))
        .route("/sessions/{sid}/events", get(events))
        .route("/sessions/{sid}/assets/{*path}", get(asset))
        .route("/sessions/{sid}/transcript", get(transcript))
        .route("/sessions/{sid}/save", post(save))
        .route("/sessions/{sid}/blocks/{block_id}", get(block).patch(update_block))
        .route("/schemas", get(schemas))
        .route("/schemas/{kind}", get(schema))
        .with_state(engine)
}

/// Binds `addr` and serves until the process stops.
pub async fn serve(engine: Arc<Engine>, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "serving");
    axum::serve(listener, router(engine)).await
}

fn session(engine: &Engine, sid: &str) -> ApiResult<Arc<Session>> {
    Ok(engine.session(sid)?)
}

async fn create_session(State(engine): State<AppState>, Json(how): Json<CreateSession>) -> ApiResult<impl IntoResponse> {
    let s = tokio::task::spawn_blocking(move || engine.create_session(how))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))??;
    let created = SessionCreated {
        session_id: s.id.to_string(),
        current_stage: s.with_project(|p| p.current_stage),
        brief: s.with_project(|p| p.progress.project_brief.clone()),
        events: s.log().all(),
    };
    Ok((StatusCode::CREATED, Json(created)))
}

async fn list_sessions(State(engine): State<AppState>) -> Json<Vec<String>> {
    Json(engine.session_ids().iter().map(|s| s.to_string()).collect())
}

async fn session_info(State(engine): State<AppState>, Path(sid): Path<String>) -> ApiResult<Json<SessionInfo>> {
    let s = session(&engine, &sid)?;
    Ok(Json(SessionInfo {
        session_id: sid,
        current_stage: s.with_project(|p| p.current_stage),
        in_flight: s.in_flight(),
        last_seq: s.log().last_seq(),
    }))
}

async fn project(State(engine): State<AppState>, Path(sid): Path<String>) -> ApiResult<Response> {
    let s = session(&engine, &sid)?;
    Ok(([(header::CONTENT_TYPE, "application/json")], s.project_json()).into_response())
}

/// Accepts a JSON `UserMessage`, or multipart with a `text` field, an
/// optional `selection` field holding JSON, and any number of files.
async fn post_message(
    State(engine): State<AppState>,
    Path(sid): Path<String>,
    req: Request,
) -> ApiResult<(StatusCode, Json<Accepted>)> {
    let s = session(&engine, &sid)?;
    let is_multipart = req
        .headers()
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.starts_with("multipart/form-data"));
    let msg = if is_multipart {
        let multipart = Multipart::from_request(req, &())
            .await
            .map_err(|e| ApiError::bad_request(e.to_string()))?;
        read_multipart_message(&s, multipart).await?
    } else {
        let Json(msg) = Json::<UserMessage>::from_request(req, &())
            .await
            .map_err(|e| ApiError::bad_request(e.body_text()))?;
        msg
    };
    let request_id = s.post_message(msg)?;
    Ok((StatusCode::ACCEPTED, Json(Accepted { request_id })))
}

async fn read_multipart_message(s: &Session, mut form: Multipart) -> ApiResult<UserMessage> {
    let mut msg = UserMessage {
        text: String::new(),
        selection: None,
        uploads: Vec::new(),
    };
    while let Some(field) = form.next_field().await.map_err(|e| ApiError::bad_request(e.to_string()))? {
        let name = field.name().unwrap_or_default().to_string();
        let file_name = field.file_name().map(str::to_string);
        let bytes = field.bytes().await.map_err(|e| ApiError::bad_request(e.to_string()))?;
        match (name.as_str(), file_name) {
            (_, Some(file_name)) => msg.uploads.push(store_upload(s, &file_name, &bytes)?),
            ("text", None) => msg.text = String::from_utf8_lossy(&bytes).into_owned(),
            ("selection", None) => {
                msg.selection = Some(
                    serde_json::from_slice(&bytes)
                        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "invalid-selection", e.to_string()))?,
                )
            }
            ("uploads", None) => msg.uploads.push(AssetRef::new(String::from_utf8_lossy(&bytes).trim())),
            _ => return Err(ApiError::bad_request(format!("unexpected field `{name}`"))),
        }
    }
    Ok(msg)
}

/// Content-addressed name so re-uploading the same file is idempotent.
fn store_upload(s: &Session, file_name: &str, bytes: &[u8]) -> ApiResult<AssetRef> {
    let ext = std::path::Path::new(file_name)
        .extension()
        .and_then(|e| e.to_str())
        .filter(|e| !e.is_empty() && e.len() <= 8 && e.chars().all(|c| c.is_ascii_alphanumeric()))
        .unwrap_or("bin")
        .to_ascii_lowercase();
    let digest = hex::encode(&Sha256::digest(bytes)[..12]);
    s.assets()
        .write(&format!("upload-{digest}.{ext}"), bytes)
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "io-failure", e.to_string()))
}

async fn upload(State(engine): State<AppState>, Path(sid): Path<String>, mut form: Multipart) -> ApiResult<Json<Uploaded>> {
    let s = session(&engine, &sid)?;
    let mut assets = Vec::new();
    while let Some(field) = form.next_field().await.map_err(|e| ApiError::bad_request(e.to_string()))? {
        let file_name = field.file_name().unwrap_or("upload.bin").to_string();
        let bytes = field.bytes().await.map_err(|e| ApiError::bad_request(e.to_string()))?;
        assets.push(store_upload(&s, &file_name, &bytes)?);
    }
    Ok(Json(Uploaded { assets }))
}

async fn cancel(
    State(engine): State<AppState>,
    Path(sid): Path<String>,
    Json(req): Json<CancelRequest>,
) -> ApiResult<Json<Acknowledged>> {
    let s = session(&engine, &sid)?;
    s.cancel(&req.request_id)?;
    Ok(Json(Acknowledged { acknowledged: true }))
}

/// Where a (re)connecting subscriber starts: after `Last-Event-ID` when
/// present, else at `from_seq` (0 and 1 both mean the beginning).
fn resume_point(headers: &HeaderMap, query: &EventsQuery) -> ApiResult<u64> {
    if let Some(v) = headers.get("last-event-id") {
        let last: u64 = v
            .to_str()
            .ok()
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| ApiError::bad_request("Last-Event-ID must be an event sequence number"))?;
        return Ok(last + 1);
    }
    Ok(query.from_seq.unwrap_or(1).max(1))
}

async fn events(
    State(engine): State<AppState>,
    Path(sid): Path<String>,
    Query(query): Query<EventsQuery>,
    headers: HeaderMap,
) -> ApiResult<Sse<impl Stream<Item = Result<Event, Infallible>>>> {
    let s = session(&engine, &sid)?;
    let from = resume_point(&headers, &query)?;
    let (tx, rx) = mpsc::unbounded_channel::<SessionEvent>();
    let backlog = s
        .log()
        .subscribe_with(from, Box::new(move |ev: &SessionEvent| tx.send(ev.clone()).is_ok()));
    let live = stream::unfold(rx, |mut rx| async move { rx.recv().await.map(|ev| (ev, rx)) });
    let stream = stream::iter(backlog).chain(live).map(|ev| Ok(sse_event(&ev)));
    Ok(Sse::new(stream).keep_alive(KeepAlive::default()))
}

pub fn sse_event(ev: &SessionEvent) -> Event {
    Event::default()
        .event(ev.kind().name())
        .id(ev.event_seq.to_string())
        .data(serde_json::to_string(ev).expect("event serializes"))
}

async fn asset(State(engine): State<AppState>, Path((sid, path)): Path<(String, String)>) -> ApiResult<Response> {
    let s = session(&engine, &sid)?;
    // `/sessions/{sid}/` followed by an asset ref resolves to that asset
    let asset = AssetRef::new(format!("assets/{path}"));
    if !s.assets().exists(&asset) {
        return Err(ApiError::not_found(format!("asset `{asset}`")));
    }
    let bytes = s
        .assets()
        .read(&asset)
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "io-failure", e.to_string()))?;
    let mime = match asset.as_str().rsplit('.').next() {
        Some("png") => "image/png",
        Some("jpg" | "jpeg") => "image/jpeg",
        Some("webp") => "image/webp",
        Some("gif") => "image/gif",
        _ => "application/octet-stream",
    };
    Ok(([(header::CONTENT_TYPE, mime)], bytes).into_response())
}

async fn transcript(State(engine): State<AppState>, Path(sid): Path<String>) -> ApiResult<Response> {
    let s = session(&engine, &sid)?;
    let body = serde_json::to_string_pretty(&s.transcript()).expect("transcript serializes");
    Ok(([(header::CONTENT_TYPE, "application/json")], body).into_response())
}

async fn save(
    State(engine): State<AppState>,
    Path(sid): Path<String>,
    body: Option<Json<SaveRequest>>,
) -> ApiResult<Json<Saved>> {
    let s = session(&engine, &sid)?;
    let req = body.map(|Json(b)| b).unwrap_or_default();
    let path = tokio::task::spawn_blocking(move || s.save(req.path.as_deref()))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))??;
    Ok(Json(Saved { path }))
}

async fn block(State(engine): State<AppState>, Path((sid, block_id)): Path<(String, String)>) -> ApiResult<Json<BlockView>> {
    let s = session(&engine, &sid)?;
    let id = BlockId::new(block_id);
    let block = s.block(&id).ok_or_else(|| ApiError::not_found(format!("block `{id}`")))?;
    let placement = s
        .with_project(|p| p.boards.placement(&id))
        .unwrap_or_default();
    Ok(Json(BlockView { block, placement }))
}

async fn update_block(
    State(engine): State<AppState>,
    Path((sid, block_id)): Path<(String, String)>,
    Json(edit): Json<BlockEdit>,
) -> ApiResult<Json<SessionEvent>> {
    let s = session(&engine, &sid)?;
    Ok(Json(s.update_block(&BlockId::new(block_id), edit)?))
}

async fn schemas() -> Json<Vec<preprod_core::schema::ElementSchema>> {
    Json(ArtifactKind::ALL.iter().map(|k| element_schema(*k)).collect())
}

async fn schema(Path(kind): Path<String>) -> ApiResult<Json<preprod_core::schema::ElementSchema>> {
    let kind: ArtifactKind = kind
        .parse()
        .map_err(|_| ApiError::not_found(format!("artifact kind `{kind}`")))?;
    Ok(Json(element_schema(kind)))
}
