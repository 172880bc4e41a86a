//! Metrics as a function of the number of clicks per instance.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use splatseg_core::decoder::{segment_instance, DecoderError};
use splatseg_core::metrics::{iou3d_multi, semantic_2d};
use splatseg_core::projection::render_scene_mask;
use splatseg_core::prompt::{cast_ray, intersect_scene, ClickPrompt};
use splatseg_core::refine::{erode, refine_mask, BinaryMask};
use splatseg_core::scene::{load_dataset_scene, load_gaussian_ply, PlyFormatHint};
use splatseg_core::{CameraView, GaussianScene, InstanceMask};

use crate::backend::BackendSpec;
use crate::params::SessionParams;

pub const CSV_HEADER: &str = "Num. of Clicks,3D IoU (%),2D mIoU (%),OA (%)";
/// Clicks are drawn from ground-truth masks eroded by this many pixels.
pub const CLICK_EROSION_PX: u32 = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub clicks: usize,
    pub iou3d: f64,
    pub miou2d: f64,
    pub oa: f64,
    /// Sampled clicks that struck empty space and were dropped.
    pub dropped: usize,
}

#[derive(Debug, thiserror::Error)]
pub enum SweepError {
    #[error("click counts must be positive")]
    ZeroClicks,
    #[error("{0}")]
    Input(String),
    #[error(transparent)]
    Decoder(#[from] DecoderError),
}

/// The ground truth a sweep runs against: unlabeled scene, 3D labels, views
/// and their masks.
pub struct SweepData {
    pub scene: GaussianScene,
    pub gt_labels: Vec<u32>,
    pub views: Vec<CameraView>,
    pub gt_masks: Vec<InstanceMask>,
}

impl SweepData {
    pub fn load(root: &Path) -> Result<Self, SweepError> {
        let err = |e: splatseg_core::scene::SceneError| SweepError::Input(e.to_string());
        let ds = load_dataset_scene(root).map_err(err)?;
        let model = ds
            .model_path
            .as_ref()
            .ok_or_else(|| SweepError::Input(format!("{}: dataset has no annotated model", root.display())))?;
        if ds.views.is_empty() {
            return Err(SweepError::Input(format!("{}: dataset has no test cameras", root.display())));
        }
        let mut scene = load_gaussian_ply(model, PlyFormatHint::Auto).map_err(err)?;
        let gt_labels = scene.labels();
        scene.clear_labels();
        let gt_masks = ds
            .evaluation_stems()
            .iter()
            .map(|s| ds.load_mask(s))
            .collect::<Result<Vec<_>, _>>()
            .map_err(err)?;
        Ok(Self {
            scene,
            gt_labels,
            views: ds.views,
            gt_masks,
        })
    }

    /// Candidate click pixels per instance id, pooled over views in view
    /// order and row-major within a view.
    pub fn click_pools(&self) -> BTreeMap<u32, Vec<(usize, u32, u32)>> {
        let mut pools: BTreeMap<u32, Vec<(usize, u32, u32)>> = BTreeMap::new();
        for (vi, mask) in self.gt_masks.iter().enumerate() {
            for id in mask.instance_ids() {
                let interior = erode(&BinaryMask::from_instance(mask, id), CLICK_EROSION_PX);
                let pool = pools.entry(id).or_default();
                for y in 0..mask.height {
                    for x in 0..mask.width {
                        if interior.get(x, y) {
                            pool.push((vi, x, y));
                        }
                    }
                }
            }
        }
        pools.retain(|_, p| !p.is_empty());
        pools
    }
}

/// One sweep point: `n` clicks per instance drawn uniformly with
/// replacement, clicks into empty space dropped, instance `k` segmented
/// with id `k`.
pub fn sweep_point(
    data: &SweepData,
    pools: &BTreeMap<u32, Vec<(usize, u32, u32)>>,
    n: usize,
    params: &SessionParams,
    backend: &BackendSpec,
    seed: u64,
) -> Result<SweepRow, SweepError> {
    if n == 0 {
        return Err(SweepError::ZeroClicks);
    }
    let backend = backend.build(params.growth_radius_m).map_err(SweepError::Input)?;
    let decoder = params.decoder();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(n as u64);
    let mut scene = data.scene.clone();
    let mut dropped = 0;
    for (&id, pool) in pools {
        let mut clicks = Vec::with_capacity(n);
        for _ in 0..n {
            let (vi, x, y) = pool[rng.random_range(0..pool.len())];
            let view = &data.views[vi];
            let hit = cast_ray(view, x as f64, y as f64)
                .and_then(|ray| intersect_scene(&scene, &ray, params.opacity_threshold))
                .is_ok();
            if hit {
                clicks.push(ClickPrompt::new(view.view_id.clone(), x as f64, y as f64, id));
            } else {
                dropped += 1;
            }
        }
        if clicks.is_empty() {
            continue;
        }
        match segment_instance(&mut scene, &data.views, &clicks, backend.as_ref(), &decoder) {
            Ok(_) | Err(DecoderError::EmptyRoi) => {}
            Err(e) => return Err(e.into()),
        }
    }
    let labels = scene.labels();
    let iou3d = iou3d_multi(&labels, &data.gt_labels).map_err(|e| SweepError::Input(e.to_string()))?;
    let pred: Vec<InstanceMask> = data
        .views
        .iter()
        .map(|v| refine_mask(&render_scene_mask(&scene, v, params.rho2), &params.refine))
        .collect();
    let sem = semantic_2d(&pred, &data.gt_masks).map_err(|e| SweepError::Input(e.to_string()))?;
    Ok(SweepRow {
        clicks: n,
        iou3d,
        miou2d: sem.miou,
        oa: sem.oa,
        dropped,
    })
}

pub fn run_sweep(
    root: &Path,
    counts: &[usize],
    params: &SessionParams,
    backend: &BackendSpec,
    seed: u64,
) -> Result<Vec<SweepRow>, SweepError> {
    if counts.contains(&0) {
        return Err(SweepError::ZeroClicks);
    }
    let data = SweepData::load(root)?;
    let pools = data.click_pools();
    counts
        .iter()
        .map(|&n| sweep_point(&data, &pools, n, params, backend, seed))
        .collect()
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{:.2},{:.2},{:.2}",
            r.clicks,
            r.iou3d * 100.0,
            r.miou2d * 100.0,
            r.oa * 100.0
        );
    }
    out
}

/// Parse `5,10,15`; zero or junk is a usage error.
pub fn parse_counts(s: &str) -> Result<Vec<usize>, String> {
    let counts = s
        .split(',')
        .map(|t| t.trim().parse::<usize>().map_err(|_| format!("`{t}` is not a click count")))
        .collect::<Result<Vec<_>, _>>()?;
    if counts.contains(&0) {
        return Err("click counts must be positive".into());
    }
    Ok(counts)
}
