//! Per-scene dataset layout:
//!
//! ```text
//! <root>/
//!   images/                      RGB frames
//!   mask/                        single-channel label maps, same stems as images
//!   class.txt                    "<id> <name>" per line
//!   annotated_pretrained_model*/ labeled Gaussian PLY (searched recursively)
//!   <name>_test/                 COLMAP tables for the evaluation views
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use super::{load_colmap_cameras, CameraView, SceneError};
use crate::mask::{InstanceMask, MaskError};

/// One image/mask pair, keyed by file stem.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub stem: String,
    pub image_path: PathBuf,
    pub mask_path: PathBuf,
}

#[derive(Debug, Clone)]
pub struct DatasetScene {
    pub root: PathBuf,
    pub images_dir: PathBuf,
    pub mask_dir: PathBuf,
    pub model_path: Option<PathBuf>,
    pub class_map: BTreeMap<u32, String>,
    pub frames: Vec<Frame>,
    /// Evaluation cameras from the `*_test` COLMAP tables (empty when absent).
    pub views: Vec<CameraView>,
}

impl DatasetScene {
    /// Stems that must be covered by predictions: the registered test views
    /// when cameras exist, otherwise every frame.
    pub fn evaluation_stems(&self) -> Vec<String> {
        if self.views.is_empty() {
            self.frames.iter().map(|f| f.stem.clone()).collect()
        } else {
            self.views.iter().map(|v| file_stem(&v.view_id)).collect()
        }
    }

    pub fn frame(&self, stem: &str) -> Option<&Frame> {
        self.frames.iter().find(|f| f.stem == stem)
    }

    pub fn load_mask(&self, stem: &str) -> Result<InstanceMask, SceneError> {
        let frame = self
            .frame(stem)
            .ok_or_else(|| SceneError::Inconsistent(format!("no frame named `{stem}`")))?;
        read_mask(&frame.mask_path)
    }
}

pub(crate) fn file_stem(name: &str) -> String {
    Path::new(name)
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| name.to_string())
}

fn read_mask(path: &Path) -> Result<InstanceMask, SceneError> {
    InstanceMask::load(path).map_err(|e| match e {
        MaskError::Image(source) => SceneError::Image {
            path: path.to_path_buf(),
            source,
        },
        other => SceneError::malformed(path, other.to_string()),
    })
}

fn list_files(dir: &Path) -> Result<BTreeMap<String, PathBuf>, SceneError> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir).map_err(|e| SceneError::io(dir, e))? {
        let entry = entry.map_err(|e| SceneError::io(dir, e))?;
        let path = entry.path();
        if path.is_file() {
            out.insert(file_stem(&entry.file_name().to_string_lossy()), path);
        }
    }
    Ok(out)
}

fn find_model(root: &Path) -> Option<PathBuf> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)
        .ok()?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_dir()
                && p.file_name()
                    .is_some_and(|n| n.to_string_lossy().starts_with("annotated_pretrained_model"))
        })
        .collect();
    dirs.sort();
    let mut stack = dirs;
    let mut plys = Vec::new();
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).ok()?.flatten() {
            let p = entry.path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|e| e.eq_ignore_ascii_case("ply")) {
                plys.push(p);
            }
        }
    }
    plys.sort();
    plys.into_iter().next()
}

fn find_test_dir(root: &Path) -> Option<PathBuf> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)
        .ok()?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir() && p.file_name().is_some_and(|n| n.to_string_lossy().ends_with("_test")))
        .collect();
    dirs.sort();
    dirs.into_iter().next()
}

/// Parse `class.txt`: one `<id> <name>` per line, `#` comments allowed.
pub fn read_class_map(path: &Path) -> Result<BTreeMap<u32, String>, SceneError> {
    let text = fs::read_to_string(path).map_err(|e| SceneError::io(path, e))?;
    let mut map = BTreeMap::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (id, name) = line.split_once(char::is_whitespace).unwrap_or((line, ""));
        let id: u32 = id
            .parse()
            .map_err(|_| SceneError::malformed(path, format!("bad class id in `{line}`")))?;
        map.insert(id, name.trim().to_string());
    }
    Ok(map)
}

/// Load and validate a dataset scene. Every mask is decoded once to check its
/// ids against `class.txt`.
pub fn load_dataset_scene(root: impl AsRef<Path>) -> Result<DatasetScene, SceneError> {
    let root = root.as_ref().to_path_buf();
    let images_dir = root.join("images");
    let mask_dir = root.join("mask");
    let images = list_files(&images_dir)?;
    let masks = list_files(&mask_dir)?;

    let orphan_images: Vec<&String> = images.keys().filter(|k| !masks.contains_key(*k)).collect();
    let orphan_masks: Vec<&String> = masks.keys().filter(|k| !images.contains_key(*k)).collect();
    if !orphan_images.is_empty() || !orphan_masks.is_empty() {
        return Err(SceneError::Inconsistent(format!(
            "images without masks: {orphan_images:?}; masks without images: {orphan_masks:?}"
        )));
    }

    let class_path = root.join("class.txt");
    let class_map = if class_path.is_file() {
        read_class_map(&class_path)?
    } else {
        BTreeMap::new()
    };

    let mut frames = Vec::with_capacity(images.len());
    for (stem, image_path) in images {
        let mask_path = masks[&stem].clone();
        let image_dims = image::image_dimensions(&image_path).map_err(|source| SceneError::Image {
            path: image_path.clone(),
            source,
        })?;
        let mask = read_mask(&mask_path)?;
        if image_dims != (mask.width, mask.height) {
            return Err(SceneError::Inconsistent(format!(
                "`{stem}`: image is {}x{} but mask is {}x{}",
                image_dims.0, image_dims.1, mask.width, mask.height
            )));
        }
        if !class_map.is_empty() {
            let unknown: BTreeSet<u32> = mask
                .labels
                .iter()
                .copied()
                .filter(|l| *l != 0 && !class_map.contains_key(l))
                .collect();
            if !unknown.is_empty() {
                return Err(SceneError::Inconsistent(format!(
                    "`{stem}`: mask ids {unknown:?} missing from class.txt"
                )));
            }
        }
        frames.push(Frame {
            stem,
            image_path,
            mask_path,
        });
    }

    let views = match find_test_dir(&root) {
        Some(dir) => load_colmap_cameras(dir)?,
        None => Vec::new(),
    };
    for v in &views {
        let stem = file_stem(&v.view_id);
        if !frames.iter().any(|f| f.stem == stem) {
            return Err(SceneError::Inconsistent(format!(
                "test view `{}` has no image/mask pair",
                v.view_id
            )));
        }
    }

    Ok(DatasetScene {
        model_path: find_model(&root),
        root,
        images_dir,
        mask_dir,
        class_map,
        frames,
        views,
    })
}
