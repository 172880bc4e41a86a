//! HTTP surface. JSON in and out; masks travel as base64 16-bit PNGs and
//! previews as plain PNG bytes.

use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post};
use axum::{Json, Router};
use base64::Engine as _;
use nalgebra::{Matrix4, Quaternion, UnitQuaternion, Vector3};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;
use splatseg_core::{CameraView, InstanceMask};

use crate::session::{CreateSession, Session, SessionError, SessionManager, Target};

pub type AppState = Arc<SessionManager>;

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        let status = StatusCode::from_u16(e.status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        Self::new(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn parse_body<T: DeserializeOwned>(body: &Bytes) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, format!("bad request body: {e}")))
}

/// Run blocking pipeline work off the async executor.
async fn blocking<T, F>(f: F) -> ApiResult<T>
where
    F: FnOnce() -> Result<T, SessionError> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, format!("worker failed: {e}")))?
        .map_err(ApiError::from)
}

fn with_read<T>(state: &AppState, id: &str, f: impl FnOnce(&Session) -> Result<T, SessionError>) -> Result<T, SessionError> {
    let s = state.get(id)?;
    let guard = s.read().map_err(|_| SessionError::Internal("session lock poisoned".into()))?;
    f(&guard)
}

fn with_write<T>(
    state: &AppState,
    id: &str,
    f: impl FnOnce(&mut Session) -> Result<T, SessionError>,
) -> Result<T, SessionError> {
    let s = state.get(id)?;
    let mut guard = s.write().map_err(|_| SessionError::Internal("session lock poisoned".into()))?;
    f(&mut guard)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct MaskPayload {
    pub view_id: String,
    pub width: u32,
    pub height: u32,
    pub refined: bool,
    pub instance_ids: Vec<u32>,
    pub png16_base64: String,
}

impl MaskPayload {
    fn new(view_id: String, mask: &InstanceMask, refined: bool) -> Result<Self, SessionError> {
        let png = mask.to_png16().map_err(|e| SessionError::Internal(e.to_string()))?;
        Ok(Self {
            view_id,
            width: mask.width,
            height: mask.height,
            refined,
            instance_ids: mask.instance_ids(),
            png16_base64: base64::engine::general_purpose::STANDARD.encode(png),
        })
    }

    pub fn decode(&self) -> Option<InstanceMask> {
        let bytes = base64::engine::general_purpose::STANDARD.decode(&self.png16_base64).ok()?;
        InstanceMask::from_png_bytes(&bytes).ok()
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ClickBody {
    view_id: String,
    u: f64,
    v: f64,
    #[serde(default = "new_target")]
    target: Target,
}

fn new_target() -> Target {
    Target::NEW
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ClickResponse {
    pub instance_id: u32,
    pub labeled_count: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
    pub mask: MaskPayload,
}

#[derive(Debug, Deserialize)]
struct MaskQuery {
    refined: Option<bool>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExportBody {
    out_dir: PathBuf,
}

/// Pinhole camera given COLMAP-style: world-to-camera rotation as a unit
/// quaternion `[w, x, y, z]` plus translation.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CameraBody {
    width: u32,
    height: u32,
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    qvec: [f64; 4],
    tvec: [f64; 3],
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RenderBody {
    camera: CameraBody,
    #[serde(default = "yes")]
    refined: bool,
}

fn yes() -> bool {
    true
}

impl CameraBody {
    fn view(&self) -> Result<CameraView, SessionError> {
        let [w, x, y, z] = self.qvec;
        let q = Quaternion::new(w, x, y, z);
        if !(q.norm() > 0.0) {
            return Err(SessionError::Invalid("qvec must be a non-zero quaternion".into()));
        }
        let r = UnitQuaternion::from_quaternion(q).to_rotation_matrix();
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(r.matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&Vector3::from(self.tvec));
        Ok(CameraView::new("camera", self.width, self.height, (self.fx, self.fy), (self.cx, self.cy), m)?)
    }
}

async fn create_session(State(state): State<AppState>, body: Bytes) -> ApiResult<impl IntoResponse> {
    let req: CreateSession = parse_body(&body)?;
    let st = state.clone();
    let id = blocking(move || st.create(&req)).await?;
    let summary = with_read(&state, &id, |s| Ok(session_summary(s)))?;
    Ok((StatusCode::CREATED, Json(summary)))
}

fn session_summary(s: &Session) -> serde_json::Value {
    json!({
        "session_id": s.id,
        "primitives": s.scene.len(),
        "views": s.views.iter().map(|v| json!({"view_id": v.view_id, "width": v.width, "height": v.height})).collect::<Vec<_>>(),
        "instances": s.instances(),
        "next_instance_id": s.next_instance_id,
        "backend": s.backend_spec.to_string(),
        "params": s.params,
    })
}

async fn get_session(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<serde_json::Value>> {
    Ok(Json(with_read(&state, &id, |s| Ok(session_summary(s)))?))
}

async fn delete_session(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<StatusCode> {
    state.remove(&id)?;
    Ok(StatusCode::NO_CONTENT)
}

async fn add_click(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Json<ClickResponse>> {
    let req: ClickBody = parse_body(&body)?;
    let resp = blocking(move || {
        with_write(&state, &id, |s| {
            let out = s.add_click(&req.view_id, req.u, req.v, req.target)?;
            Ok(ClickResponse {
                instance_id: out.instance_id,
                labeled_count: out.labeled_count,
                warning: out.warning,
                mask: MaskPayload::new(out.view_id, &out.mask, true)?,
            })
        })
    })
    .await?;
    Ok(Json(resp))
}

async fn view_mask(
    State(state): State<AppState>,
    Path((id, vid)): Path<(String, String)>,
    Query(q): Query<MaskQuery>,
) -> ApiResult<Json<MaskPayload>> {
    let refined = q.refined.unwrap_or(true);
    let payload = blocking(move || {
        with_read(&state, &id, |s| {
            let mask = s.render_mask(&vid, refined)?;
            MaskPayload::new(vid.clone(), &mask, refined)
        })
    })
    .await?;
    Ok(Json(payload))
}

async fn view_preview(State(state): State<AppState>, Path((id, vid)): Path<(String, String)>) -> ApiResult<Response> {
    let png = blocking(move || {
        with_read(&state, &id, |s| {
            s.preview(&vid)?.to_png().map_err(|e| SessionError::Internal(e.to_string()))
        })
    })
    .await?;
    Ok(([(header::CONTENT_TYPE, "image/png")], png).into_response())
}

async fn render_camera(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Json<MaskPayload>> {
    let req: RenderBody = parse_body(&body)?;
    let payload = blocking(move || {
        let view = req.camera.view()?;
        with_read(&state, &id, |s| MaskPayload::new(view.view_id.clone(), &s.render_camera(&view, req.refined), req.refined))
    })
    .await?;
    Ok(Json(payload))
}

async fn list_views(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<serde_json::Value>> {
    Ok(Json(with_read(&state, &id, |s| Ok(session_summary(s)["views"].clone()))?))
}

async fn list_instances(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<serde_json::Value>> {
    let v = with_read(&state, &id, |s| {
        Ok(json!({ "instances": s.instances(), "next_instance_id": s.next_instance_id }))
    })?;
    Ok(Json(v))
}

async fn clear_instance(
    State(state): State<AppState>,
    Path((id, iid)): Path<(String, u32)>,
) -> ApiResult<Json<serde_json::Value>> {
    let cleared = blocking(move || with_write(&state, &id, |s| s.clear_instance(iid))).await?;
    Ok(Json(json!({ "instance_id": iid, "cleared": cleared })))
}

async fn export(State(state): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult<impl IntoResponse> {
    let req: ExportBody = parse_body(&body)?;
    let manifest = blocking(move || with_read(&state, &id, |s| s.export(&req.out_dir))).await?;
    Ok(Json(manifest))
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session).delete(delete_session))
        .route("/sessions/{id}/clicks", post(add_click))
        .route("/sessions/{id}/views", get(list_views))
        .route("/sessions/{id}/views/{vid}/mask", get(view_mask))
        .route("/sessions/{id}/views/{vid}/preview", get(view_preview))
        .route("/sessions/{id}/render", post(render_camera))
        .route("/sessions/{id}/instances", get(list_instances))
        .route("/sessions/{id}/instances/{iid}", delete(clear_instance))
        .route("/sessions/{id}/export", post(export))
        .with_state(state)
}
