use std::path::Path;

use serde::{Deserialize, Serialize};
use splatseg_core::scene::save_labeled_ply;

use crate::backend::BackendSpec;
use crate::params::SessionParams;
use crate::session::{view_stem, write_file, ClickRecord, InstanceSummary, Session, SessionError};

pub const PLY_NAME: &str = "labeled_scene.ply";
pub const SESSION_NAME: &str = "session.json";
pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Relative to the export directory, `/`-separated.
    pub path: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub files: Vec<ManifestEntry>,
}

/// What a session ran with. Holds nothing run-specific (no session id, no
/// absolute paths) so re-exports compare byte for byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub params: SessionParams,
    pub backend: BackendSpec,
    pub views: Vec<String>,
    pub clicks: Vec<ClickRecord>,
    pub instances: Vec<InstanceSummary>,
}

/// Write the labeled PLY, refined masks of every view (16-bit ids plus a
/// color-mapped copy), `session.json` and `manifest.json`.
pub fn export_session(session: &Session, out_dir: &Path) -> Result<Manifest, SessionError> {
    let mut files = Vec::new();
    let mut put = |rel: String, bytes: &[u8]| -> Result<(), SessionError> {
        write_file(&out_dir.join(&rel), bytes)?;
        files.push(ManifestEntry {
            path: rel,
            bytes: bytes.len() as u64,
        });
        Ok(())
    };

    let ply_path = out_dir.join(PLY_NAME);
    std::fs::create_dir_all(out_dir).map_err(|e| SessionError::Internal(format!("{}: {e}", out_dir.display())))?;
    save_labeled_ply(&session.scene, &ply_path).map_err(|e| SessionError::Internal(e.to_string()))?;
    let ply_len = std::fs::metadata(&ply_path)
        .map_err(|e| SessionError::Internal(format!("{}: {e}", ply_path.display())))?
        .len();

    for view in &session.views {
        let stem = view_stem(&view.view_id);
        let mask = session.render_camera(view, true);
        let enc = |e: splatseg_core::mask::MaskError| SessionError::Internal(e.to_string());
        put(format!("masks/{stem}.png"), &mask.to_png16().map_err(enc)?)?;
        put(format!("masks_color/{stem}.png"), &mask.to_color_png().map_err(enc)?)?;
    }

    let record = SessionRecord {
        params: session.params.clone(),
        backend: session.backend_spec.clone(),
        views: session.views.iter().map(|v| v.view_id.clone()).collect(),
        clicks: session.clicks.iter().map(ClickRecord::from).collect(),
        instances: session.instances(),
    };
    let json = serde_json::to_string_pretty(&record).map_err(|e| SessionError::Internal(e.to_string()))? + "\n";
    put(SESSION_NAME.to_string(), json.as_bytes())?;

    files.push(ManifestEntry {
        path: PLY_NAME.to_string(),
        bytes: ply_len,
    });
    files.sort_by(|a, b| a.path.cmp(&b.path));
    let manifest = Manifest { files };
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| SessionError::Internal(e.to_string()))? + "\n";
    write_file(&out_dir.join(MANIFEST_NAME), json.as_bytes())?;
    Ok(manifest)
}
