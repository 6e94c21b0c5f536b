//! HTTP front end over trained generator checkpoints: decode latent points,
//! browse grids, run the feasibility screen and keep human tags.
//!
//! | route | |
//! |---|---|
//! | `GET /api/models` | registered generators |
//! | `POST /api/decode` | `{model, z}` to PNG, or JSON with `?format=base64` |
//! | `GET /api/tile?model&z1&z2` | PNG for one point |
//! | `GET /api/grid?model&n&min&max&page&page_size` | paged tile manifest |
//! | `GET /api/screen?model&z1&z2` | screening report of the decode |
//! | `POST /api/tags`, `GET /api/tags?model` | human verdicts |

use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine;
use bridge_gan::explore::{grid_points, screen, FeasibilityReport, GridSpec, ScreenThresholds};
use bridge_gan::nn::Network;
use bridge_gan::GrayImage;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub mod registry;
pub mod tags;

pub use registry::{CanvasSize, Diagnostic, LoadedModel, ModelInfo, Registry, ID_LEN};
pub use tags::{TagLabel, TagRecord, TagStore};

/// Largest grid page and largest grid side the service will lay out.
pub const MAX_PAGE_SIZE: usize = 2500;
pub const MAX_GRID_N: usize = 1000;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("{path}: {reason}")]
    Io { path: PathBuf, reason: String },
    #[error("no loadable generator checkpoint under {root} ({} skipped)", diagnostics.len())]
    NoModels {
        root: PathBuf,
        diagnostics: Vec<Diagnostic>,
    },
    #[error("tag store: {0}")]
    TagStore(String),
}

#[derive(Debug)]
struct Inner {
    registry: Registry,
    tags: TagStore,
}

#[derive(Debug, Clone)]
pub struct AppState(Arc<Inner>);

impl AppState {
    pub fn new(registry: Registry, tags: TagStore) -> Self {
        AppState(Arc::new(Inner { registry, tags }))
    }

    /// Loads the registry and opens (compacting) the tag store.
    pub fn open(models: &Path, tags: &Path) -> Result<(AppState, Vec<Diagnostic>), ServiceError> {
        let (registry, diagnostics) = Registry::load(models)?;
        Ok((AppState::new(registry, TagStore::open(tags)?), diagnostics))
    }

    pub fn registry(&self) -> &Registry {
        &self.0.registry
    }

    pub fn tags(&self) -> &TagStore {
        &self.0.tags
    }
}

/// Error body: `{"error": code, "message": ..., "known_models": [...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: u16,
    pub error: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub known_models: Option<Vec<String>>,
}

impl ApiError {
    fn new(status: StatusCode, error: &str, message: impl Into<String>) -> Self {
        ApiError {
            status: status.as_u16(),
            error: error.into(),
            message: message.into(),
            known_models: None,
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }

    fn internal(message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self)).into_response()
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        ApiError::bad_request(r.body_text())
    }
}

impl From<QueryRejection> for ApiError {
    fn from(r: QueryRejection) -> Self {
        ApiError::bad_request(r.body_text())
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn model(state: &AppState, id: &str) -> ApiResult<Arc<Network>> {
    match state.registry().get(id) {
        Some(m) => Ok(Arc::clone(&m.network)),
        None => Err(ApiError {
            known_models: Some(state.registry().ids()),
            ..ApiError::new(
                StatusCode::NOT_FOUND,
                "unknown_model",
                format!("no model `{id}`"),
            )
        }),
    }
}

fn latent(values: &[f64]) -> ApiResult<[f32; 2]> {
    let [a, b] = values else {
        return Err(ApiError::bad_request(format!(
            "z must have 2 coordinates, got {}",
            values.len()
        )));
    };
    let z = [*a as f32, *b as f32];
    if z.iter().any(|v| !v.is_finite()) {
        return Err(ApiError::bad_request(
            "z coordinates must be finite f32 values",
        ));
    }
    Ok(z)
}

/// Decodes off the async workers; weights are shared read-only.
async fn decode(net: Arc<Network>, z: [f32; 2]) -> ApiResult<GrayImage> {
    tokio::task::spawn_blocking(move || bridge_gan::nn::decode(&net, z))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?
        .map_err(|e| ApiError::internal(e.to_string()))
}

fn png_bytes(img: &GrayImage) -> ApiResult<Vec<u8>> {
    img.to_png().map_err(|e| ApiError::internal(e.to_string()))
}

fn png_response(bytes: Vec<u8>) -> Response {
    ([(header::CONTENT_TYPE, "image/png")], bytes).into_response()
}

async fn models(State(state): State<AppState>) -> Json<Vec<ModelInfo>> {
    Json(state.registry().infos())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecodeRequest {
    pub model: String,
    pub z: Vec<f64>,
}

#[derive(Debug, Deserialize)]
pub struct DecodeQuery {
    pub format: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodedImage {
    pub model: String,
    pub z: [f32; 2],
    pub width: usize,
    pub height: usize,
    pub png_base64: String,
}

async fn decode_handler(
    State(state): State<AppState>,
    query: Result<Query<DecodeQuery>, QueryRejection>,
    body: Result<Json<DecodeRequest>, JsonRejection>,
) -> ApiResult<Response> {
    let Query(query) = query?;
    let Json(req) = body?;
    let base64 = match query.format.as_deref() {
        None | Some("png") => false,
        Some("base64") => true,
        Some(other) => return Err(ApiError::bad_request(format!("unknown format `{other}`"))),
    };
    let net = model(&state, &req.model)?;
    let z = latent(&req.z)?;
    let img = decode(net, z).await?;
    let bytes = png_bytes(&img)?;
    if !base64 {
        return Ok(png_response(bytes));
    }
    Ok(Json(EncodedImage {
        model: req.model,
        z,
        width: img.width(),
        height: img.height(),
        png_base64: base64::engine::general_purpose::STANDARD.encode(bytes),
    })
    .into_response())
}

#[derive(Debug, Deserialize)]
pub struct PointQuery {
    pub model: String,
    pub z1: f64,
    pub z2: f64,
}

async fn tile(
    State(state): State<AppState>,
    query: Result<Query<PointQuery>, QueryRejection>,
) -> ApiResult<Response> {
    let Query(q) = query?;
    let net = model(&state, &q.model)?;
    let img = decode(net, latent(&[q.z1, q.z2])?).await?;
    Ok(png_response(png_bytes(&img)?))
}

async fn screen_handler(
    State(state): State<AppState>,
    query: Result<Query<PointQuery>, QueryRejection>,
) -> ApiResult<Json<FeasibilityReport>> {
    let Query(q) = query?;
    let net = model(&state, &q.model)?;
    let img = decode(net, latent(&[q.z1, q.z2])?).await?;
    Ok(Json(screen(
        &img,
        &ScreenThresholds::for_width(img.width()),
    )))
}

#[derive(Debug, Deserialize)]
pub struct GridQuery {
    pub model: String,
    pub n: Option<usize>,
    pub min: Option<f64>,
    pub max: Option<f64>,
    pub page: Option<usize>,
    pub page_size: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tile {
    pub i: usize,
    pub j: usize,
    pub z: [f32; 2],
    pub url: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPage {
    pub model: String,
    pub grid: GridSpec,
    pub total: usize,
    pub page: usize,
    pub page_size: usize,
    pub tiles: Vec<Tile>,
}

/// URL of the PNG for one point. Shortest round-trip decimals keep it exact.
pub fn tile_url(model: &str, z: [f32; 2]) -> String {
    format!("/api/tile?model={model}&z1={}&z2={}", z[0], z[1])
}

async fn grid(
    State(state): State<AppState>,
    query: Result<Query<GridQuery>, QueryRejection>,
) -> ApiResult<Json<GridPage>> {
    let Query(q) = query?;
    model(&state, &q.model)?;
    let d = GridSpec::default();
    let spec = GridSpec::new(
        q.n.unwrap_or(d.n),
        q.min.unwrap_or(d.min),
        q.max.unwrap_or(d.max),
    )
    .map_err(|e| ApiError::bad_request(e.to_string()))?;
    if spec.n > MAX_GRID_N {
        return Err(ApiError::bad_request(format!(
            "n must be at most {MAX_GRID_N}"
        )));
    }
    let total = spec.total();
    let page_size = q.page_size.unwrap_or(total.min(MAX_PAGE_SIZE));
    if page_size == 0 || page_size > MAX_PAGE_SIZE {
        return Err(ApiError::bad_request(format!(
            "page_size must be in 1..={MAX_PAGE_SIZE}"
        )));
    }
    let page = q.page.unwrap_or(0);
    let start = page.saturating_mul(page_size);
    if start >= total && page != 0 {
        return Err(ApiError::bad_request(format!(
            "page {page} is past the last tile"
        )));
    }
    let points = grid_points(&spec).map_err(|e| ApiError::bad_request(e.to_string()))?;
    let tiles = points
        .iter()
        .skip(start)
        .take(page_size)
        .map(|p| Tile {
            i: p.i,
            j: p.j,
            z: p.z,
            url: tile_url(&q.model, p.z),
        })
        .collect();
    Ok(Json(GridPage {
        model: q.model,
        grid: spec,
        total,
        page,
        page_size,
        tiles,
    }))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TagRequest {
    pub model: String,
    pub z: Vec<f64>,
    pub label: TagLabel,
    #[serde(default)]
    pub note: String,
}

async fn put_tag(
    State(state): State<AppState>,
    body: Result<Json<TagRequest>, JsonRejection>,
) -> ApiResult<Json<TagRecord>> {
    let Json(req) = body?;
    model(&state, &req.model)?;
    let record = TagRecord {
        model: req.model,
        z: latent(&req.z)?,
        label: req.label,
        timestamp: humantime::format_rfc3339_millis(std::time::SystemTime::now()).to_string(),
        note: req.note,
    };
    let store = state.clone();
    let saved = tokio::task::spawn_blocking(move || store.tags().put(record))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?
        .map_err(|e| {
            ApiError::new(
                StatusCode::INTERNAL_SERVER_ERROR,
                "tag_store",
                e.to_string(),
            )
        })?;
    Ok(Json(saved))
}

#[derive(Debug, Deserialize)]
pub struct TagQuery {
    pub model: Option<String>,
}

async fn list_tags(
    State(state): State<AppState>,
    query: Result<Query<TagQuery>, QueryRejection>,
) -> ApiResult<Json<Vec<TagRecord>>> {
    let Query(q) = query?;
    Ok(Json(state.tags().list(q.model.as_deref())))
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/models", get(models))
        .route("/api/decode", post(decode_handler))
        .route("/api/tile", get(tile))
        .route("/api/grid", get(grid))
        .route("/api/screen", get(screen_handler))
        .route("/api/tags", get(list_tags).post(put_tag))
        .with_state(state)
}

/// Serves until the process is stopped.
pub async fn serve(listener: tokio::net::TcpListener, state: AppState) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}
