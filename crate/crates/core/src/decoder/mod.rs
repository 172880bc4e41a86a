//! Gaussian decoder: cylindrical ROI crop, batching, backend inference,
//! max-pool aggregation and label write-back.

mod external;
mod geometric;

pub use external::ExternalBackend;
pub use geometric::{region_grow, GeometricBackend, DEFAULT_GROWTH_RADIUS_M, MIN_SEED_WEIGHT};

use nalgebra::Vector3;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::prompt::{
    augment_gaussians, cast_ray, compute_weights, intersect_scene, AnchorPoint, AugmentedPoint, ClickPrompt,
    PromptError, WeightMap, DEFAULT_OPACITY_THRESHOLD, DEFAULT_SIGMA_M,
};
use crate::scene::{CameraView, GaussianScene};

pub const DEFAULT_RADIUS_M: f64 = 3.0;
pub const DEFAULT_HEIGHT_M: f64 = 3.0;
pub const BATCH_CAP: usize = 8192;
pub const DEFAULT_SEED: u64 = 42;

#[derive(Debug, thiserror::Error)]
pub enum DecoderError {
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("no primitives inside the ROI cylinder (click anchored in a void)")]
    EmptyRoi,
    #[error("backend received an empty batch")]
    EmptyInput,
    #[error("ROI point {0} is not covered by any batch")]
    Coverage(usize),
    #[error("logits have {got} entries for {expected} points")]
    Alignment { expected: usize, got: usize },
    #[error("backend failed: {0}")]
    Backend(String),
    #[error("unknown view `{0}`")]
    UnknownView(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoiSelection {
    /// Scene indices inside the cylinder, strictly increasing.
    pub indices: Vec<usize>,
    pub anchor: AnchorPoint,
    pub radius_m: f64,
    pub height_m: f64,
}

impl RoiSelection {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Per-point foreground/background probabilities, each pair summing to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationLogits {
    pub fg: Vec<f64>,
    pub bg: Vec<f64>,
}

impl SegmentationLogits {
    /// Build from foreground probabilities, `bg = 1 - fg`.
    pub fn from_fg(fg: Vec<f64>) -> Self {
        let bg = fg.iter().map(|f| 1.0 - f).collect();
        Self { fg, bg }
    }

    /// Rescale every pair to sum to 1; a `(0, 0)` pair becomes `(0.5, 0.5)`.
    pub fn normalized(mut fg: Vec<f64>, mut bg: Vec<f64>) -> Self {
        for (f, b) in fg.iter_mut().zip(bg.iter_mut()) {
            let s = *f + *b;
            if s > 0.0 {
                *f /= s;
                *b /= s;
            } else {
                *f = 0.5;
                *b = 0.5;
            }
        }
        Self { fg, bg }
    }

    pub fn len(&self) -> usize {
        self.fg.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fg.is_empty()
    }

    pub fn is_foreground(&self, i: usize) -> bool {
        self.fg[i] > self.bg[i]
    }
}

/// One backend call: a batch of augmented points plus the click anchors
/// (world units) that produced the weight channel.
#[derive(Debug, Clone, Copy)]
pub struct SegmentRequest<'a> {
    pub points: &'a [AugmentedPoint],
    pub anchors: &'a [Vector3<f64>],
    pub unit_scale: f64,
}

/// Per-point foreground/background classifier over one batch of at most
/// [`BATCH_CAP`] points. Output must be aligned with the input order and
/// deterministic for fixed input.
pub trait SegmentationBackend: Send + Sync {
    fn name(&self) -> String;
    fn segment(&self, request: &SegmentRequest<'_>) -> Result<SegmentationLogits, DecoderError>;
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchSplit {
    /// Random partition into near-equal parts.
    #[default]
    Disjoint,
    /// Cyclic windows of `cap` points over the shuffled order, one more
    /// window than the disjoint split so that neighbours overlap.
    Overlapping,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverwritePolicy {
    #[default]
    LastWriterWins,
    KeepExisting,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecoderParams {
    pub opacity_threshold: f64,
    pub sigma_m: f64,
    pub radius_m: f64,
    pub height_m: f64,
    /// Cylinder axis in world coordinates.
    pub up: [f64; 3],
    pub batch_cap: usize,
    pub seed: u64,
    pub split: BatchSplit,
    pub overwrite: OverwritePolicy,
}

impl Default for DecoderParams {
    fn default() -> Self {
        Self {
            opacity_threshold: DEFAULT_OPACITY_THRESHOLD,
            sigma_m: DEFAULT_SIGMA_M,
            radius_m: DEFAULT_RADIUS_M,
            height_m: DEFAULT_HEIGHT_M,
            up: [0.0, 0.0, 1.0],
            batch_cap: BATCH_CAP,
            seed: DEFAULT_SEED,
            split: BatchSplit::Disjoint,
            overwrite: OverwritePolicy::LastWriterWins,
        }
    }
}

/// Orthonormal frame `(e1, e2, up)`; the canonical axes when `up` is +z.
fn cylinder_basis(up: &Vector3<f64>) -> Result<[Vector3<f64>; 3], DecoderError> {
    let n = up.norm();
    if !(n > 0.0) || !n.is_finite() {
        return Err(DecoderError::InvalidParameter("up vector must be non-zero".into()));
    }
    let e3 = up / n;
    if e3 == Vector3::z() {
        return Ok([Vector3::x(), Vector3::y(), e3]);
    }
    let helper = if e3.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    let e1 = (helper - e3 * helper.dot(&e3)).normalize();
    let e2 = e3.cross(&e1);
    Ok([e1, e2, e3])
}

/// Primitives with horizontal distance `≤ r` and vertical offset `≤ h/2`
/// from the anchor, both in meters.
pub fn crop_cylinder(
    scene: &GaussianScene,
    anchor: &AnchorPoint,
    radius_m: f64,
    height_m: f64,
    up: &Vector3<f64>,
) -> Result<RoiSelection, DecoderError> {
    if !(radius_m > 0.0 && height_m > 0.0) {
        return Err(DecoderError::InvalidParameter(format!(
            "cylinder radius {radius_m} and height {height_m} must be positive"
        )));
    }
    let [e1, e2, e3] = cylinder_basis(up)?;
    let s = scene.unit_scale;
    let half = height_m / 2.0;
    let indices: Vec<usize> = scene
        .primitives
        .iter()
        .enumerate()
        .filter(|(_, g)| {
            let d = g.position_f64() - anchor.position;
            let horizontal = d.dot(&e1).hypot(d.dot(&e2)) * s;
            let vertical = (d.dot(&e3) * s).abs();
            horizontal <= radius_m && vertical <= half
        })
        .map(|(i, _)| i)
        .collect();
    if indices.is_empty() {
        return Err(DecoderError::EmptyRoi);
    }
    Ok(RoiSelection {
        indices,
        anchor: *anchor,
        radius_m,
        height_m,
    })
}

/// Split positions `0..n` into batches of at most `cap`.
///
/// Inputs that fit in one batch are passed through in order. Larger inputs
/// are shuffled with a seeded ChaCha8 stream and cut into `⌈n / cap⌉`
/// near-equal parts (or overlapping windows); each batch is returned sorted.
pub fn make_batches(n: usize, cap: usize, seed: u64, split: BatchSplit) -> Result<Vec<Vec<usize>>, DecoderError> {
    if cap == 0 {
        return Err(DecoderError::InvalidParameter("batch cap must be positive".into()));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    if n <= cap {
        return Ok(vec![(0..n).collect()]);
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let k = n.div_ceil(cap);
    let mut batches: Vec<Vec<usize>> = match split {
        BatchSplit::Disjoint => {
            let (base, extra) = (n / k, n % k);
            let mut start = 0;
            (0..k)
                .map(|j| {
                    let len = base + usize::from(j < extra);
                    let part = order[start..start + len].to_vec();
                    start += len;
                    part
                })
                .collect()
        }
        BatchSplit::Overlapping => {
            let windows = k + 1;
            (0..windows)
                .map(|j| {
                    let start = j * n / windows;
                    (0..cap).map(|o| order[(start + o) % n]).collect()
                })
                .collect()
        }
    };
    for b in &mut batches {
        b.sort_unstable();
    }
    Ok(batches)
}

/// Max-pool per-batch logits back onto `n` ROI points and renormalize.
pub fn aggregate_logits(
    n: usize,
    batches: &[Vec<usize>],
    per_batch: &[SegmentationLogits],
) -> Result<SegmentationLogits, DecoderError> {
    if batches.len() != per_batch.len() {
        return Err(DecoderError::Alignment {
            expected: batches.len(),
            got: per_batch.len(),
        });
    }
    let mut fg = vec![f64::NEG_INFINITY; n];
    let mut bg = vec![f64::NEG_INFINITY; n];
    for (batch, logits) in batches.iter().zip(per_batch) {
        if logits.fg.len() != batch.len() || logits.bg.len() != batch.len() {
            return Err(DecoderError::Alignment {
                expected: batch.len(),
                got: logits.fg.len().min(logits.bg.len()),
            });
        }
        for (k, &i) in batch.iter().enumerate() {
            if i >= n {
                return Err(DecoderError::InvalidParameter(format!("batch index {i} out of range {n}")));
            }
            fg[i] = fg[i].max(logits.fg[k]);
            bg[i] = bg[i].max(logits.bg[k]);
        }
    }
    if let Some(i) = fg.iter().position(|f| *f == f64::NEG_INFINITY) {
        return Err(DecoderError::Coverage(i));
    }
    Ok(SegmentationLogits::normalized(fg, bg))
}

/// Write `instance_id` onto every ROI primitive with `fg > bg`. Returns the
/// number of primitives carrying the label as a result of this call.
pub fn assign_instance_labels(
    scene: &mut GaussianScene,
    roi: &RoiSelection,
    logits: &SegmentationLogits,
    instance_id: u32,
    policy: OverwritePolicy,
) -> Result<usize, DecoderError> {
    if instance_id == 0 {
        return Err(DecoderError::InvalidParameter("instance id must be ≥ 1".into()));
    }
    if logits.fg.len() != roi.len() || logits.bg.len() != roi.len() {
        return Err(DecoderError::Alignment {
            expected: roi.len(),
            got: logits.fg.len(),
        });
    }
    let mut count = 0;
    for (k, &i) in roi.indices.iter().enumerate() {
        if !logits.is_foreground(k) {
            continue;
        }
        let label = &mut scene.primitives[i].instance_label;
        if policy == OverwritePolicy::KeepExisting && *label != 0 && *label != instance_id {
            continue;
        }
        *label = instance_id;
        count += 1;
    }
    Ok(count)
}

/// Everything [`segment_instance`] computed on the way to the labels.
#[derive(Debug, Clone)]
pub struct SegmentOutcome {
    pub instance_id: u32,
    pub labeled: usize,
    pub anchors: Vec<AnchorPoint>,
    pub roi_size: usize,
    pub batch_count: usize,
}

/// Resolve every click to an anchor, then run the decoder around the first
/// anchor and label the foreground with the clicks' instance id.
pub fn segment_instance(
    scene: &mut GaussianScene,
    views: &[CameraView],
    clicks: &[ClickPrompt],
    backend: &dyn SegmentationBackend,
    params: &DecoderParams,
) -> Result<SegmentOutcome, DecoderError> {
    let first = clicks
        .first()
        .ok_or_else(|| DecoderError::InvalidParameter("at least one click is required".into()))?;
    let instance_id = first.instance_id;
    if instance_id == 0 || clicks.iter().any(|c| c.instance_id != instance_id) {
        return Err(DecoderError::InvalidParameter(
            "clicks must share one instance id ≥ 1".into(),
        ));
    }

    let mut anchors = Vec::with_capacity(clicks.len());
    for c in clicks {
        let view = views
            .iter()
            .find(|v| v.view_id == c.view_id)
            .ok_or_else(|| DecoderError::UnknownView(c.view_id.clone()))?;
        let ray = cast_ray(view, c.u, c.v)?;
        anchors.push(intersect_scene(scene, &ray, params.opacity_threshold)?);
    }

    let mut weights: Option<WeightMap> = None;
    for a in &anchors {
        let w = compute_weights(scene, &a.position, params.sigma_m)?;
        match weights.as_mut() {
            Some(acc) => acc.merge_max(&w)?,
            None => weights = Some(w),
        }
    }
    let weights = weights.expect("at least one anchor");

    let up = Vector3::from(params.up);
    let roi = crop_cylinder(scene, &anchors[0], params.radius_m, params.height_m, &up)?;
    let all_points = augment_gaussians(scene, &weights)?;
    let roi_points: Vec<AugmentedPoint> = roi.indices.iter().map(|&i| all_points[i]).collect();
    drop(all_points);

    let batches = make_batches(roi_points.len(), params.batch_cap, params.seed, params.split)?;
    let anchor_positions: Vec<Vector3<f64>> = anchors.iter().map(|a| a.position).collect();
    let unit_scale = scene.unit_scale;
    let per_batch = batches
        .par_iter()
        .map(|batch| {
            let points: Vec<AugmentedPoint> = batch.iter().map(|&k| roi_points[k]).collect();
            let logits = backend.segment(&SegmentRequest {
                points: &points,
                anchors: &anchor_positions,
                unit_scale,
            })?;
            if logits.fg.len() != points.len() || logits.bg.len() != points.len() {
                return Err(DecoderError::Alignment {
                    expected: points.len(),
                    got: logits.fg.len(),
                });
            }
            if logits.fg.iter().chain(&logits.bg).any(|v| !v.is_finite()) {
                return Err(DecoderError::Backend("non-finite probability".into()));
            }
            Ok(logits)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let logits = aggregate_logits(roi_points.len(), &batches, &per_batch)?;
    let labeled = assign_instance_labels(scene, &roi, &logits, instance_id, params.overwrite)?;

    Ok(SegmentOutcome {
        instance_id,
        labeled,
        anchors,
        roi_size: roi.len(),
        batch_count: batches.len(),
    })
}
