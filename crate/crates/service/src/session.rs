//! Interactive sessions: one scene, its cameras, the clicks so far and the
//! labels they produced.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};
use splatseg_core::decoder::{segment_instance, DecoderError, SegmentationBackend};
use splatseg_core::mask::RgbFrame;
use splatseg_core::prompt::{ClickPrompt, PromptError};
use splatseg_core::projection::{render_preview, render_scene_mask};
use splatseg_core::refine::refine_mask;
use splatseg_core::scene::{load_colmap_cameras, load_dataset_scene, load_gaussian_ply, PlyFormatHint, SceneError};
use splatseg_core::{CameraView, GaussianScene, InstanceMask};

use crate::backend::BackendSpec;
use crate::params::SessionParams;

#[derive(Debug, thiserror::Error)]
pub enum SessionError {
    #[error("{0}")]
    NotFound(String),
    #[error("{0}")]
    Invalid(String),
    #[error("empty-space click: {0}")]
    EmptySpace(String),
    #[error("backend failed: {0}")]
    Backend(String),
    #[error("{0}")]
    Internal(String),
}

impl SessionError {
    pub fn status(&self) -> u16 {
        match self {
            SessionError::NotFound(_) => 404,
            SessionError::Invalid(_) => 422,
            SessionError::EmptySpace(_) => 409,
            SessionError::Backend(_) => 502,
            SessionError::Internal(_) => 500,
        }
    }
}

impl From<SceneError> for SessionError {
    fn from(e: SceneError) -> Self {
        SessionError::Invalid(e.to_string())
    }
}

impl From<DecoderError> for SessionError {
    fn from(e: DecoderError) -> Self {
        match e {
            DecoderError::Prompt(PromptError::NoHit { .. }) | DecoderError::EmptyRoi => {
                SessionError::EmptySpace(e.to_string())
            }
            DecoderError::Prompt(PromptError::OutOfBounds { .. }) | DecoderError::InvalidParameter(_) => {
                SessionError::Invalid(e.to_string())
            }
            DecoderError::UnknownView(v) => SessionError::NotFound(format!("unknown view `{v}`")),
            DecoderError::Backend(_) | DecoderError::Alignment { .. } | DecoderError::EmptyInput => {
                SessionError::Backend(e.to_string())
            }
            other => SessionError::Internal(other.to_string()),
        }
    }
}

/// Which instance a click prompts for: `"new"` or an existing id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Target {
    New(NewTag),
    Existing(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NewTag {
    New,
}

impl Target {
    pub const NEW: Target = Target::New(NewTag::New);
}

/// Serializable form of a recorded click.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClickRecord {
    pub view_id: String,
    pub u: f64,
    pub v: f64,
    pub instance_id: u32,
}

impl From<&ClickPrompt> for ClickRecord {
    fn from(c: &ClickPrompt) -> Self {
        Self {
            view_id: c.view_id.clone(),
            u: c.u,
            v: c.v,
            instance_id: c.instance_id,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceSummary {
    pub id: u32,
    pub clicks: usize,
    pub primitives: usize,
}

#[derive(Debug, Clone)]
pub struct ClickOutcome {
    pub instance_id: u32,
    /// Primitives carrying the instance id after this click.
    pub labeled_count: usize,
    pub view_id: String,
    /// Refined mask of the clicked view.
    pub mask: InstanceMask,
    /// Set when the refined mask does not carry the id at the click pixel.
    pub warning: Option<String>,
}

pub struct Session {
    pub id: String,
    pub scene: GaussianScene,
    pub views: Vec<CameraView>,
    pub clicks: Vec<ClickPrompt>,
    pub next_instance_id: u32,
    pub params: SessionParams,
    pub backend_spec: BackendSpec,
    backend: Arc<dyn SegmentationBackend>,
}

impl std::fmt::Debug for Session {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Session")
            .field("id", &self.id)
            .field("primitives", &self.scene.len())
            .field("views", &self.views.len())
            .field("clicks", &self.clicks.len())
            .field("next_instance_id", &self.next_instance_id)
            .finish()
    }
}

/// Scene and cameras for a session. A directory is read as a dataset root:
/// its annotated model and its registered test views.
pub fn load_scene_and_views(
    scene_path: &Path,
    cameras_path: Option<&Path>,
) -> Result<(GaussianScene, Vec<CameraView>), SessionError> {
    let (mut scene, mut views) = if scene_path.is_dir() {
        let ds = load_dataset_scene(scene_path)?;
        let model = ds.model_path.clone().ok_or_else(|| {
            SessionError::Invalid(format!("{}: dataset has no point_cloud.ply", scene_path.display()))
        })?;
        (load_gaussian_ply(model, PlyFormatHint::Auto)?, ds.views)
    } else {
        (load_gaussian_ply(scene_path, PlyFormatHint::Auto)?, Vec::new())
    };
    if let Some(cams) = cameras_path {
        views = load_colmap_cameras(cams)?;
    }
    if views.is_empty() {
        return Err(SessionError::Invalid(format!(
            "{}: no cameras found (pass a cameras path)",
            scene_path.display()
        )));
    }
    scene.clear_labels();
    Ok((scene, views))
}

pub fn view_stem(view_id: &str) -> String {
    Path::new(view_id)
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| view_id.to_string())
}

impl Session {
    pub fn new(
        id: String,
        mut scene: GaussianScene,
        views: Vec<CameraView>,
        params: SessionParams,
        backend_spec: BackendSpec,
    ) -> Result<Self, SessionError> {
        params.validate().map_err(SessionError::Invalid)?;
        let backend = backend_spec.build(params.growth_radius_m).map_err(SessionError::Invalid)?;
        if views.is_empty() {
            return Err(SessionError::Invalid("a session needs at least one view".into()));
        }
        scene.clear_labels();
        Ok(Self {
            id,
            scene,
            views,
            clicks: Vec::new(),
            next_instance_id: 1,
            params,
            backend_spec,
            backend,
        })
    }

    pub fn view(&self, view_id: &str) -> Result<&CameraView, SessionError> {
        self.views
            .iter()
            .find(|v| v.view_id == view_id)
            .ok_or_else(|| SessionError::NotFound(format!("unknown view `{view_id}`")))
    }

    fn has_instance(&self, id: u32) -> bool {
        self.clicks.iter().any(|c| c.instance_id == id)
    }

    /// Segment with every click of the target instance plus the new one; the
    /// click is recorded only when segmentation succeeds.
    pub fn add_click(&mut self, view_id: &str, u: f64, v: f64, target: Target) -> Result<ClickOutcome, SessionError> {
        let view = self.view(view_id)?;
        if !(u.is_finite() && v.is_finite() && view.contains_pixel(u, v)) {
            return Err(SessionError::Invalid(format!(
                "pixel ({u}, {v}) outside the {}x{} view",
                view.width, view.height
            )));
        }
        let id = match target {
            Target::New(_) => self.next_instance_id,
            Target::Existing(k) if self.has_instance(k) => k,
            Target::Existing(k) => return Err(SessionError::NotFound(format!("unknown instance {k}"))),
        };
        let click = ClickPrompt::new(view_id, u, v, id);
        let mut prompts: Vec<ClickPrompt> = self.clicks.iter().filter(|c| c.instance_id == id).cloned().collect();
        prompts.push(click.clone());

        segment_instance(
            &mut self.scene,
            &self.views,
            &prompts,
            self.backend.as_ref(),
            &self.params.decoder(),
        )?;
        self.clicks.push(click);
        if id == self.next_instance_id {
            self.next_instance_id += 1;
        }

        let mask = self.render_mask(view_id, true)?;
        let (x, y) = (
            (u.round() as u32).min(mask.width - 1),
            (v.round() as u32).min(mask.height - 1),
        );
        let found = mask.get(x, y);
        let warning = (found != id).then(|| {
            format!("refined mask carries id {found} at the clicked pixel ({x}, {y}), not {id}")
        });
        Ok(ClickOutcome {
            instance_id: id,
            labeled_count: self.scene.primitives.iter().filter(|g| g.instance_label == id).count(),
            view_id: view_id.to_string(),
            mask,
            warning,
        })
    }

    pub fn render_camera(&self, view: &CameraView, refined: bool) -> InstanceMask {
        let raw = render_scene_mask(&self.scene, view, self.params.rho2);
        if refined {
            refine_mask(&raw, &self.params.refine)
        } else {
            raw
        }
    }

    pub fn render_mask(&self, view_id: &str, refined: bool) -> Result<InstanceMask, SessionError> {
        Ok(self.render_camera(self.view(view_id)?, refined))
    }

    pub fn preview(&self, view_id: &str) -> Result<RgbFrame, SessionError> {
        Ok(render_preview(&self.scene, self.view(view_id)?, self.params.rho2))
    }

    pub fn instances(&self) -> Vec<InstanceSummary> {
        let mut map: BTreeMap<u32, InstanceSummary> = BTreeMap::new();
        for c in &self.clicks {
            map.entry(c.instance_id)
                .or_insert(InstanceSummary {
                    id: c.instance_id,
                    clicks: 0,
                    primitives: 0,
                })
                .clicks += 1;
        }
        for g in &self.scene.primitives {
            if let Some(s) = map.get_mut(&g.instance_label) {
                s.primitives += 1;
            }
        }
        map.into_values().collect()
    }

    /// Drop an instance's clicks and labels. Ids are not reused.
    pub fn clear_instance(&mut self, id: u32) -> Result<usize, SessionError> {
        if !self.has_instance(id) {
            return Err(SessionError::NotFound(format!("unknown instance {id}")));
        }
        self.clicks.retain(|c| c.instance_id != id);
        let mut cleared = 0;
        for g in &mut self.scene.primitives {
            if g.instance_label == id {
                g.instance_label = 0;
                cleared += 1;
            }
        }
        Ok(cleared)
    }

    pub fn export(&self, out_dir: &Path) -> Result<crate::export::Manifest, SessionError> {
        crate::export::export_session(self, out_dir)
    }
}

/// Request body of session creation. `params` overrides the server defaults
/// field by field.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    pub scene_path: PathBuf,
    #[serde(default)]
    pub cameras_path: Option<PathBuf>,
    #[serde(default)]
    pub params: Option<serde_json::Map<String, serde_json::Value>>,
    #[serde(default)]
    pub backend: Option<String>,
}

/// All live sessions. Each session sits behind its own lock so that renders
/// share it and segmentation holds it exclusively.
pub struct SessionManager {
    sessions: RwLock<BTreeMap<String, Arc<RwLock<Session>>>>,
    pub defaults: SessionParams,
    pub default_backend: BackendSpec,
}

impl SessionManager {
    pub fn new(defaults: SessionParams, default_backend: BackendSpec) -> Self {
        Self {
            sessions: RwLock::new(BTreeMap::new()),
            defaults,
            default_backend,
        }
    }

    pub fn resolve_params(
        &self,
        overrides: Option<&serde_json::Map<String, serde_json::Value>>,
    ) -> Result<SessionParams, SessionError> {
        let Some(overrides) = overrides else {
            return Ok(self.defaults.clone());
        };
        let mut base = serde_json::to_value(&self.defaults).map_err(|e| SessionError::Internal(e.to_string()))?;
        let obj = base.as_object_mut().expect("params serialize to an object");
        for (k, v) in overrides {
            if !obj.contains_key(k) {
                return Err(SessionError::Invalid(format!("unknown parameter `{k}`")));
            }
            obj.insert(k.clone(), v.clone());
        }
        serde_json::from_value(base).map_err(|e| SessionError::Invalid(format!("bad params: {e}")))
    }

    pub fn create(&self, req: &CreateSession) -> Result<String, SessionError> {
        let params = self.resolve_params(req.params.as_ref())?;
        let backend = match &req.backend {
            Some(b) => b.parse().map_err(SessionError::Invalid)?,
            None => self.default_backend.clone(),
        };
        let (scene, views) = load_scene_and_views(&req.scene_path, req.cameras_path.as_deref())?;
        self.insert(scene, views, params, backend)
    }

    pub fn insert(
        &self,
        scene: GaussianScene,
        views: Vec<CameraView>,
        params: SessionParams,
        backend: BackendSpec,
    ) -> Result<String, SessionError> {
        let id = uuid::Uuid::new_v4().simple().to_string();
        let session = Session::new(id.clone(), scene, views, params, backend)?;
        self.sessions
            .write()
            .expect("session table lock")
            .insert(id.clone(), Arc::new(RwLock::new(session)));
        Ok(id)
    }

    pub fn get(&self, id: &str) -> Result<Arc<RwLock<Session>>, SessionError> {
        self.sessions
            .read()
            .expect("session table lock")
            .get(id)
            .cloned()
            .ok_or_else(|| SessionError::NotFound(format!("unknown session `{id}`")))
    }

    pub fn remove(&self, id: &str) -> Result<(), SessionError> {
        self.sessions
            .write()
            .expect("session table lock")
            .remove(id)
            .map(|_| ())
            .ok_or_else(|| SessionError::NotFound(format!("unknown session `{id}`")))
    }

    pub fn len(&self) -> usize {
        self.sessions.read().expect("session table lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<(), SessionError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| SessionError::Internal(format!("{}: {e}", parent.display())))?;
    }
    fs::write(path, bytes).map_err(|e| SessionError::Internal(format!("{}: {e}", path.display())))
}
