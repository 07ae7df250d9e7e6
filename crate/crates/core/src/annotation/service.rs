use std::future::Future;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, RwLock};

use axum::extract::{Path, Query, State};
use axum::http::{header, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tower_http::cors::{Any, CorsLayer};
use tower_http::services::ServeDir;

use super::store::{parse_annotation_label, AnnotationError, PendingItem, Stats, Store};
use crate::spectrogram::{BandMatrix, SpectrogramMeta};

/// Shared service state. Reads take the lock shared; every mutation takes
/// it exclusively, so there is a single writer at any time.
pub struct AppState {
    pub store: RwLock<Store>,
}

impl AppState {
    pub fn new(store: Store) -> Arc<Self> {
        Arc::new(Self {
            store: RwLock::new(store),
        })
    }
}

#[derive(Debug, Deserialize)]
pub struct PendingQuery {
    pub limit: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PendingResponse {
    pub items: Vec<PendingItem>,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrogramResponse {
    pub id: String,
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<Vec<f32>>,
    pub meta: SpectrogramMeta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRequest {
    pub id: String,
    pub label: String,
    #[serde(default)]
    pub annotator: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelResponse {
    pub ok: bool,
    pub remaining: usize,
}

struct ApiError(StatusCode, String);

impl From<AnnotationError> for ApiError {
    fn from(e: AnnotationError) -> Self {
        let status = match e {
            AnnotationError::UnknownId(_) => StatusCode::NOT_FOUND,
            AnnotationError::BadLabel(_) => StatusCode::UNPROCESSABLE_ENTITY,
            _ => {
                log::error!("annotation store: {e}");
                StatusCode::INTERNAL_SERVER_ERROR
            }
        };
        ApiError(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(serde_json::json!({ "error": self.1 }))).into_response()
    }
}

fn poisoned() -> ApiError {
    ApiError(StatusCode::INTERNAL_SERVER_ERROR, "store lock poisoned".into())
}

async fn pending(State(st): State<Arc<AppState>>, Query(q): Query<PendingQuery>) -> Result<Json<PendingResponse>, ApiError> {
    let store = st.store.read().map_err(|_| poisoned())?;
    let (items, total) = store.pending(q.limit);
    Ok(Json(PendingResponse { items, total }))
}

async fn spectrogram(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<SpectrogramResponse>, ApiError> {
    let s = tokio::task::spawn_blocking(move || {
        let store = st.store.read().map_err(|_| poisoned())?;
        store.load(&id).map_err(ApiError::from)
    })
    .await
    .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    Ok(Json(SpectrogramResponse {
        id: s.meta.id.clone(),
        rows: BandMatrix::ROWS,
        cols: BandMatrix::COLS,
        values: s.values.rows().map(<[f32]>::to_vec).collect(),
        meta: s.meta,
    }))
}

async fn label(State(st): State<Arc<AppState>>, Json(req): Json<LabelRequest>) -> Result<Json<LabelResponse>, ApiError> {
    let label = parse_annotation_label(&req.label)?;
    let remaining = tokio::task::spawn_blocking(move || {
        let mut store = st.store.write().map_err(|_| poisoned())?;
        store
            .apply_label(&req.id, label, req.annotator.as_deref())
            .map_err(ApiError::from)
    })
    .await
    .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    Ok(Json(LabelResponse { ok: true, remaining }))
}

async fn stats(State(st): State<Arc<AppState>>) -> Result<Json<Stats>, ApiError> {
    Ok(Json(st.store.read().map_err(|_| poisoned())?.stats()))
}

/// API routes, CORS for any origin, and optionally static UI assets at `/`.
pub fn router(state: Arc<AppState>, static_dir: Option<PathBuf>) -> Router {
    let cors = CorsLayer::new()
        .allow_origin(Any)
        .allow_methods([Method::GET, Method::POST, Method::OPTIONS])
        .allow_headers([header::CONTENT_TYPE]);
    let mut app = Router::new()
        .route("/api/pending", get(pending))
        .route("/api/spectrogram/{id}", get(spectrogram))
        .route("/api/label", post(label))
        .route("/api/stats", get(stats))
        .with_state(state);
    if let Some(dir) = static_dir {
        app = app.fallback_service(ServeDir::new(dir));
    }
    app.layer(cors)
}

/// Serves `state` on `addr` until `shutdown` resolves. `on_bound` receives
/// the actual address, useful when binding port 0.
pub async fn serve<F>(
    state: Arc<AppState>,
    addr: SocketAddr,
    static_dir: Option<PathBuf>,
    on_bound: impl FnOnce(SocketAddr),
    shutdown: F,
) -> std::io::Result<()>
where
    F: Future<Output = ()> + Send + 'static,
{
    let listener = tokio::net::TcpListener::bind(addr).await?;
    on_bound(listener.local_addr()?);
    axum::serve(listener, router(state, static_dir))
        .with_graceful_shutdown(shutdown)
        .await
}
