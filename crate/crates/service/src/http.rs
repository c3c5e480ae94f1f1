//! JSON-over-HTTP routes.
//!
//! | method | path | body / query |
//! |---|---|---|
//! | GET | `/health` | |
//! | GET | `/components` | `?category=` |
//! | GET | `/component-cloud` | `?key=` (percent-encoded; merged ids contain `+`) |
//! | POST | `/sessions` | [`CreateSession`] |
//! | POST | `/sessions/import` | [`AssemblyDocument`] |
//! | GET | `/sessions/{id}` | |
//! | GET | `/sessions/{id}/suggestions` | `?after_revision=&timeout_ms=` (long poll) |
//! | POST | `/sessions/{id}/choose` | [`ChooseRequest`] |
//! | POST | `/sessions/{id}/override-place` | [`OverrideRequest`] |
//! | POST | `/sessions/{id}/undo` | [`UndoRequest`] |
//! | GET | `/sessions/{id}/export` | |
//!
//! Every mutating request carries the revision it was computed against; a
//! stale one gets `409` with the current revision and changes nothing.
//! Point clouds are encoded as described in [`crate::wire`].

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::Duration;

use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use partforge::geometry::Point3;
use partforge::retrieval::EntryInfo;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::watch;

use crate::session::{AssemblyDocument, Catalog, CreateSession, Session, SessionError, SessionState, SuggestionView};
use crate::wire::encode_points;

/// Upper bound on a long-poll wait.
pub const MAX_POLL: Duration = Duration::from_secs(30);

#[derive(Debug)]
pub enum ApiError {
    NotFound(String),
    Session(SessionError),
    Internal(String),
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        Self::Session(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, code, extra) = match &self {
            ApiError::NotFound(_) => (StatusCode::NOT_FOUND, "not_found", json!({})),
            ApiError::Internal(_) => (StatusCode::INTERNAL_SERVER_ERROR, "internal", json!({})),
            ApiError::Session(e) => match e {
                SessionError::Conflict { current, .. } => {
                    (StatusCode::CONFLICT, "conflict", json!({ "current_revision": current }))
                }
                SessionError::UnknownCategory(_) | SessionError::UnknownComponent(_) => {
                    (StatusCode::NOT_FOUND, "not_found", json!({}))
                }
                SessionError::BadPlacement(_) => (StatusCode::UNPROCESSABLE_ENTITY, "bad_placement", json!({})),
                SessionError::BadCandidate { .. } => (StatusCode::UNPROCESSABLE_ENTITY, "bad_candidate", json!({})),
                SessionError::NothingToUndo => (StatusCode::UNPROCESSABLE_ENTITY, "nothing_to_undo", json!({})),
                SessionError::WrongCategory { .. } | SessionError::BadDocument(_) => {
                    (StatusCode::BAD_REQUEST, "bad_request", json!({}))
                }
                SessionError::Retrieval(_) | SessionError::Dataset(_) => {
                    (StatusCode::INTERNAL_SERVER_ERROR, "internal", json!({}))
                }
            },
        };
        let message = match &self {
            ApiError::NotFound(m) | ApiError::Internal(m) => m.clone(),
            ApiError::Session(e) => e.to_string(),
        };
        let mut body = json!({ "error": code, "message": message });
        if let (Some(b), Some(x)) = (body.as_object_mut(), extra.as_object()) {
            b.extend(x.clone());
        }
        (status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

struct Slot {
    session: Mutex<Session>,
    revision: watch::Sender<u64>,
}

/// Shared server state: immutable catalog plus the live sessions.
#[derive(Clone)]
pub struct AppState {
    catalog: Arc<Catalog>,
    sessions: Arc<RwLock<HashMap<String, Arc<Slot>>>>,
    next_id: Arc<AtomicU64>,
}

impl AppState {
    pub fn new(catalog: Catalog) -> Self {
        Self {
            catalog: Arc::new(catalog),
            sessions: Arc::default(),
            next_id: Arc::new(AtomicU64::new(1)),
        }
    }

    pub fn catalog(&self) -> &Catalog {
        &self.catalog
    }

    fn fresh_id(&self) -> String {
        format!("s{}", self.next_id.fetch_add(1, Ordering::Relaxed))
    }

    fn slot(&self, id: &str) -> Result<Arc<Slot>, ApiError> {
        self.sessions
            .read()
            .expect("session map poisoned")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::NotFound(format!("no session `{id}`")))
    }

    fn insert(&self, session: Session) -> SessionState {
        let state = session.state();
        let (tx, _) = watch::channel(session.revision());
        let slot = Arc::new(Slot {
            session: Mutex::new(session),
            revision: tx,
        });
        self.sessions
            .write()
            .expect("session map poisoned")
            .insert(state.session_id.clone(), slot);
        state
    }
}

/// Runs CPU-bound work off the async executor.
async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::Internal(e.to_string()))?
}

/// Applies `op` to one session and wakes its long pollers.
async fn mutate(
    app: AppState,
    id: String,
    op: impl FnOnce(&mut Session, &Catalog) -> Result<SessionState, SessionError> + Send + 'static,
) -> ApiResult<SessionState> {
    let slot = app.slot(&id)?;
    let catalog = app.catalog.clone();
    let state = blocking(move || {
        let mut s = slot.session.lock().expect("session poisoned");
        let state = op(&mut s, &catalog)?;
        slot.revision.send_replace(state.revision);
        Ok(state)
    })
    .await?;
    Ok(Json(state))
}

pub fn router(app: AppState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/components", get(list_components))
        .route("/component-cloud", get(component_cloud))
        .route("/sessions", post(create_session))
        .route("/sessions/import", post(import_session))
        .route("/sessions/{id}", get(get_state))
        .route("/sessions/{id}/suggestions", get(get_suggestions))
        .route("/sessions/{id}/choose", post(choose))
        .route("/sessions/{id}/override-place", post(override_place))
        .route("/sessions/{id}/undo", post(undo))
        .route("/sessions/{id}/export", get(export))
        .with_state(app)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub categories: Vec<String>,
    pub components: usize,
    pub sessions: usize,
}

async fn health(State(app): State<AppState>) -> Json<Health> {
    Json(Health {
        status: "ok".into(),
        categories: app.catalog.categories(),
        components: app.catalog.len(),
        sessions: app.sessions.read().expect("session map poisoned").len(),
    })
}

#[derive(Debug, Deserialize)]
pub struct CategoryQuery {
    pub category: Option<String>,
}

async fn list_components(State(app): State<AppState>, Query(q): Query<CategoryQuery>) -> ApiResult<Vec<EntryInfo>> {
    Ok(Json(app.catalog.list(q.category.as_deref())?))
}

#[derive(Debug, Deserialize)]
pub struct KeyQuery {
    pub key: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CloudResponse {
    pub key: String,
    pub n_points: usize,
    /// Centroid in the shape frame; the cloud itself is centered.
    pub centroid: Point3,
    pub points: String,
}

async fn component_cloud(State(app): State<AppState>, Query(q): Query<KeyQuery>) -> ApiResult<CloudResponse> {
    let e = app
        .catalog
        .find(&q.key)
        .ok_or_else(|| SessionError::UnknownComponent(q.key.clone()))?;
    let pts = e.component.cloud_centered.points();
    Ok(Json(CloudResponse {
        key: q.key,
        n_points: pts.len(),
        centroid: e.component.centroid,
        points: encode_points(pts),
    }))
}

async fn create_session(State(app): State<AppState>, Json(req): Json<CreateSession>) -> ApiResult<SessionState> {
    let id = app.fresh_id();
    let catalog = app.catalog.clone();
    let session = blocking(move || Ok(Session::create(&catalog, id, &req)?)).await?;
    Ok(Json(app.insert(session)))
}

async fn import_session(State(app): State<AppState>, Json(doc): Json<AssemblyDocument>) -> ApiResult<SessionState> {
    let id = app.fresh_id();
    let catalog = app.catalog.clone();
    let session = blocking(move || Ok(Session::import(&catalog, id, &doc)?)).await?;
    Ok(Json(app.insert(session)))
}

async fn get_state(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<SessionState> {
    let slot = app.slot(&id)?;
    let state = slot.session.lock().expect("session poisoned").state();
    Ok(Json(state))
}

#[derive(Debug, Default, Deserialize)]
pub struct PollQuery {
    /// Wait until the session revision exceeds this.
    pub after_revision: Option<u64>,
    pub timeout_ms: Option<u64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SuggestionsResponse {
    pub revision: u64,
    /// False when the wait timed out without a newer revision.
    pub changed: bool,
    pub suggestions: Vec<SuggestionView>,
}

async fn get_suggestions(
    State(app): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<PollQuery>,
) -> ApiResult<SuggestionsResponse> {
    let slot = app.slot(&id)?;
    let mut rx = slot.revision.subscribe();
    let mut changed = true;
    if let Some(after) = q.after_revision {
        let wait = Duration::from_millis(q.timeout_ms.unwrap_or(10_000)).min(MAX_POLL);
        let waited = tokio::time::timeout(wait, rx.wait_for(|&r| r > after)).await;
        changed = matches!(waited, Ok(Ok(_)));
    }
    let s = slot.session.lock().expect("session poisoned");
    Ok(Json(SuggestionsResponse {
        revision: s.revision(),
        changed,
        suggestions: s.suggestions().to_vec(),
    }))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChooseRequest {
    pub revision: u64,
    pub candidate: usize,
    #[serde(default)]
    pub request_id: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OverrideRequest {
    pub revision: u64,
    pub candidate: usize,
    pub position: Point3,
    #[serde(default)]
    pub request_id: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UndoRequest {
    pub revision: u64,
    #[serde(default)]
    pub request_id: Option<String>,
}

async fn choose(
    State(app): State<AppState>,
    Path(id): Path<String>,
    Json(r): Json<ChooseRequest>,
) -> ApiResult<SessionState> {
    mutate(app, id, move |s, c| {
        s.choose(c, r.revision, r.candidate, r.request_id.as_deref())
    })
    .await
}

async fn override_place(
    State(app): State<AppState>,
    Path(id): Path<String>,
    Json(r): Json<OverrideRequest>,
) -> ApiResult<SessionState> {
    mutate(app, id, move |s, c| {
        s.override_place(c, r.revision, r.candidate, r.position, r.request_id.as_deref())
    })
    .await
}

async fn undo(
    State(app): State<AppState>,
    Path(id): Path<String>,
    Json(r): Json<UndoRequest>,
) -> ApiResult<SessionState> {
    mutate(app, id, move |s, c| s.undo(c, r.revision, r.request_id.as_deref())).await
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ExportResponse {
    pub document: AssemblyDocument,
    /// Merged cloud of every placed part, in the assembly frame.
    pub points: String,
    /// Part index of each point, in document order.
    pub part_of_point: Vec<u32>,
}

async fn export(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<ExportResponse> {
    let slot = app.slot(&id)?;
    let catalog = app.catalog.clone();
    blocking(move || {
        let s = slot.session.lock().expect("session poisoned");
        let document = s.export(&catalog)?;
        let merged = s.merged_cloud(&catalog)?;
        let pts: Vec<Point3> = merged.iter().map(|(p, _)| *p).collect();
        Ok(Json(ExportResponse {
            document,
            points: encode_points(&pts),
            part_of_point: merged.iter().map(|(_, i)| *i).collect(),
        }))
    })
    .await
}
