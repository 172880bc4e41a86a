//! Synthetic scenes with known instance membership: ball-shaped clusters of
//! small Gaussians on a horizontal ring, seen by cameras on a larger ring.

use std::fs;
use std::path::Path;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::mask::palette_color;
use crate::projection::render_scene_mask;
use crate::scene::{save_labeled_ply, write_colmap_text, CameraView, GaussianPrimitive, GaussianScene, SceneError};

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterParams {
    pub clusters: usize,
    pub points_per_cluster: usize,
    /// Ball radius of each cluster, world units.
    pub cluster_radius: f64,
    /// Circumradius of the ring the cluster centers sit on.
    pub ring_radius: f64,
    pub gaussian_scale: f32,
    pub opacity: f32,
    pub seed: u64,
}

impl Default for ClusterParams {
    fn default() -> Self {
        Self {
            clusters: 5,
            points_per_cluster: 2400,
            cluster_radius: 0.08,
            ring_radius: 1.0,
            gaussian_scale: 0.015,
            opacity: 0.9,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ClusterScene {
    /// Scene with all labels 0.
    pub scene: GaussianScene,
    /// Ground-truth instance id per primitive (cluster `k` is id `k + 1`).
    pub gt_labels: Vec<u32>,
    pub centers: Vec<Vector3<f64>>,
    pub cluster_radius: f64,
}

impl ClusterScene {
    /// Copy of the scene carrying the ground-truth labels.
    pub fn labeled(&self) -> GaussianScene {
        let mut s = self.scene.clone();
        s.set_labels(&self.gt_labels);
        s
    }
}

/// Centers on a regular polygon in the `z = 0` plane.
pub fn ring_centers(n: usize, radius: f64) -> Vec<Vector3<f64>> {
    (0..n)
        .map(|k| {
            let a = std::f64::consts::TAU * k as f64 / n as f64;
            Vector3::new(radius * a.cos(), radius * a.sin(), 0.0)
        })
        .collect()
}

/// Uniform samples inside each ball; primitives are grouped by cluster.
pub fn cluster_scene(params: &ClusterParams) -> ClusterScene {
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let centers = ring_centers(params.clusters, params.ring_radius);
    let r = params.cluster_radius;
    let mut primitives = Vec::with_capacity(params.clusters * params.points_per_cluster);
    let mut gt_labels = Vec::with_capacity(primitives.capacity());
    for (k, c) in centers.iter().enumerate() {
        let color = palette_color(k as u32 + 1).map(|v| v as f32 / 255.0);
        let mut placed = 0;
        while placed < params.points_per_cluster {
            let d = Vector3::new(rng.random_range(-r..=r), rng.random_range(-r..=r), rng.random_range(-r..=r));
            if d.norm_squared() > r * r {
                continue;
            }
            let p = (c + d).cast::<f32>();
            primitives.push(GaussianPrimitive::new(p, Vector3::repeat(params.gaussian_scale), params.opacity, color));
            gt_labels.push(k as u32 + 1);
            placed += 1;
        }
    }
    ClusterScene {
        scene: GaussianScene::new(primitives),
        gt_labels,
        centers,
        cluster_radius: r,
    }
}

/// `n` views evenly spaced on a ring of `distance` around `target`, raised
/// by `elevation`, looking at the target with +z up.
pub fn ring_cameras(
    n: usize,
    (width, height): (u32, u32),
    focal: f64,
    distance: f64,
    elevation: f64,
    target: Vector3<f64>,
) -> Result<Vec<CameraView>, SceneError> {
    (0..n)
        .map(|k| {
            let a = std::f64::consts::TAU * (k as f64 + 0.5) / n as f64;
            let eye = target + Vector3::new(distance * a.cos(), distance * a.sin(), elevation);
            CameraView::look_at(format!("view_{k:03}.png"), width, height, focal, eye, target, Vector3::z())
        })
        .collect()
}

/// The default evaluation rig: 8 views, 640×480, f = 500 px.
pub fn default_cameras() -> Vec<CameraView> {
    ring_cameras(8, (640, 480), 500.0, 3.2, 1.6, Vector3::zeros()).expect("fixed rig is valid")
}

/// Index of the view whose camera center is closest to `p`; from there
/// nothing else on the ring sits in front of it.
pub fn nearest_view(views: &[CameraView], p: &Vector3<f64>) -> Option<usize> {
    views
        .iter()
        .enumerate()
        .min_by(|a, b| {
            let da = (a.1.camera_center() - p).norm_squared();
            let db = (b.1.camera_center() - p).norm_squared();
            da.total_cmp(&db).then(a.0.cmp(&b.0))
        })
        .map(|(i, _)| i)
}

/// Write a dataset directory with the standard layout: flat-color images,
/// ground-truth masks rendered from the labeled scene, `class.txt`, the
/// annotated PLY and COLMAP tables for every view under `<name>_test`.
pub fn write_dataset(
    root: &Path,
    name: &str,
    labeled: &GaussianScene,
    views: &[CameraView],
    tau: f64,
) -> Result<(), SceneError> {
    let io = |p: &Path, e| SceneError::io(p, e);
    let images = root.join("images");
    let masks = root.join("mask");
    let model_dir = root.join("annotated_pretrained_model");
    for d in [&images, &masks, &model_dir] {
        fs::create_dir_all(d).map_err(|e| io(d, e))?;
    }
    let mask_err = |p: &Path, e: crate::mask::MaskError| SceneError::malformed(p, e.to_string());
    for v in views {
        let stem = Path::new(&v.view_id)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| v.view_id.clone());
        let img_path = images.join(format!("{stem}.png"));
        let preview = crate::projection::render_preview(labeled, v, tau);
        let png = preview.to_png().map_err(|e| mask_err(&img_path, e))?;
        fs::write(&img_path, png).map_err(|e| io(&img_path, e))?;
        let mask_path = masks.join(format!("{stem}.png"));
        render_scene_mask(labeled, v, tau)
            .save_png16(&mask_path)
            .map_err(|e| mask_err(&mask_path, e))?;
    }
    let class_path = root.join("class.txt");
    let classes: String = (1..=labeled.max_label()).map(|k| format!("{k} object_{k}\n")).collect();
    fs::write(&class_path, classes).map_err(|e| io(&class_path, e))?;
    save_labeled_ply(labeled, model_dir.join("point_cloud.ply"))?;
    write_colmap_text(root.join(format!("{name}_test")), views)?;
    Ok(())
}
