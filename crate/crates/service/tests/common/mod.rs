#![allow(dead_code)]
//! Fixtures and independent reference implementations shared by the
//! service tests and the acceptance suite.

use std::collections::VecDeque;
use std::path::Path;

use nalgebra::{Matrix3, UnitQuaternion, Vector3};
use splatseg_core::projection::{ProjectedPrimitive, DEFAULT_RHO2_THRESHOLD};
use splatseg_core::prompt::Ray;
use splatseg_core::synth::{cluster_scene, default_cameras, write_dataset, ClusterParams, ClusterScene};
use splatseg_core::{CameraView, GaussianPrimitive};

/// A three-cluster dataset on disk with the default camera rig.
pub struct SmallDataset {
    pub dir: tempfile::TempDir,
    pub synth: ClusterScene,
    pub views: Vec<CameraView>,
}

impl SmallDataset {
    pub fn new() -> Self {
        Self::with(ClusterParams {
            clusters: 3,
            points_per_cluster: 800,
            ..ClusterParams::default()
        })
    }

    pub fn with(params: ClusterParams) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let synth = cluster_scene(&params);
        let views = default_cameras();
        write_dataset(dir.path(), "Synth", &synth.labeled(), &views, DEFAULT_RHO2_THRESHOLD).unwrap();
        Self { dir, synth, views }
    }

    pub fn root(&self) -> &Path {
        self.dir.path()
    }
}

// ---------------------------------------------------------------- rendering

/// Per pixel, the first labeled entry (in list order) whose center is within
/// `ρ² ≤ τ`. No tiling; entries are only pre-grouped by the rows they can
/// possibly reach (with a one-pixel slack) to keep large views tractable.
pub fn brute_force_mask(projected: &[ProjectedPrimitive], width: u32, height: u32, tau: f64) -> Vec<u32> {
    let mut out = vec![0u32; (width * height) as usize];
    let reach = tau.max(0.0).sqrt() + 1.0;
    let mut rows: Vec<Vec<&ProjectedPrimitive>> = vec![Vec::new(); height as usize];
    for p in projected.iter().filter(|p| p.label > 0) {
        let y = p.center_px[1];
        let lo = (y - reach).floor().max(0.0);
        let hi = (y + reach).ceil().min(height as f64 - 1.0);
        if lo <= hi {
            for v in lo as usize..=hi as usize {
                rows[v].push(p);
            }
        }
    }
    for v in 0..height {
        for u in 0..width {
            for p in &rows[v as usize] {
                let dx = p.center_px[0] - u as f64;
                let dy = p.center_px[1] - v as f64;
                if dx * dx + dy * dy <= tau {
                    out[(v * width + u) as usize] = p.label;
                    break;
                }
            }
        }
    }
    out
}

/// Confusion-matrix mIoU over classes ≥ 1 present on either side, and
/// overall accuracy, computed directly from label arrays.
pub fn naive_miou_oa(gt: &[Vec<u32>], pred: &[Vec<u32>]) -> (f64, f64) {
    let max_id = gt.iter().chain(pred).flatten().copied().max().unwrap_or(0) as usize;
    let mut cm = vec![vec![0u64; max_id + 1]; max_id + 1];
    for (g, p) in gt.iter().zip(pred) {
        for (&a, &b) in g.iter().zip(p) {
            cm[a as usize][b as usize] += 1;
        }
    }
    let total: u64 = cm.iter().flatten().sum();
    let oa = if total == 0 {
        1.0
    } else {
        (0..=max_id).map(|c| cm[c][c]).sum::<u64>() as f64 / total as f64
    };
    let mut ious = Vec::new();
    for c in 1..=max_id {
        let tp = cm[c][c] as f64;
        let fp = (0..=max_id).map(|t| cm[t][c]).sum::<u64>() as f64 - tp;
        let fn_ = cm[c].iter().sum::<u64>() as f64 - tp;
        if tp + fp + fn_ > 0.0 {
            ious.push(tp / (tp + fp + fn_));
        }
    }
    let miou = if ious.is_empty() { 1.0 } else { ious.iter().sum::<f64>() / ious.len() as f64 };
    (miou, oa)
}

// ------------------------------------------------------------------ anchors

fn covariance_inverse(g: &GaussianPrimitive) -> Matrix3<f64> {
    let q = g.rotation.cast::<f64>();
    let r = q.to_rotation_matrix().into_inner();
    let s = Matrix3::from_diagonal(&g.scale.cast::<f64>().map(|v| v * v));
    let cov = r * s * r.transpose() + Matrix3::identity() * 1e-8;
    cov.try_inverse().unwrap()
}

/// Dense ray march: sample `t` on a uniform grid, take for each Gaussian the
/// sample nearest its center, composite those samples front to back and
/// return the depth where accumulated opacity first exceeds `tau`.
pub fn ray_march_depth(primitives: &[GaussianPrimitive], ray: &Ray, t_max: f64, dt: f64, tau: f64) -> Option<f64> {
    let steps = (t_max / dt).ceil() as usize;
    let mut hits: Vec<(f64, usize, f64)> = Vec::new();
    for (i, g) in primitives.iter().enumerate() {
        let mu = g.position_f64();
        let inv = covariance_inverse(g);
        let mut best: Option<(f64, f64)> = None;
        for k in 1..=steps {
            let t = k as f64 * dt;
            let d2 = (ray.origin + ray.direction * t - mu).norm_squared();
            if best.is_none_or(|(_, b)| d2 < b) {
                best = Some((t, d2));
            }
        }
        let (t, _) = best?;
        let delta = ray.origin + ray.direction * t - mu;
        let alpha = g.opacity as f64 * (-0.5 * (delta.transpose() * inv * delta)[0]).exp();
        hits.push((t, i, alpha));
    }
    hits.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut transmittance = 1.0;
    for (t, _, alpha) in hits {
        transmittance *= 1.0 - alpha;
        if 1.0 - transmittance > tau {
            return Some(t);
        }
    }
    None
}

pub fn random_rotation(rng: &mut impl rand::Rng) -> UnitQuaternion<f32> {
    UnitQuaternion::from_euler_angles(
        rng.random_range(-3.1..3.1f32),
        rng.random_range(-1.5..1.5f32),
        rng.random_range(-3.1..3.1f32),
    )
}

pub fn unit_vector(rng: &mut impl rand::Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let n = v.norm();
        if n > 0.1 && n <= 1.0 {
            return v / n;
        }
    }
}

// ------------------------------------------------------------------ metrics

pub type PixelSet = std::collections::BTreeSet<u32>;

pub fn set_iou(a: &PixelSet, b: &PixelSet) -> f64 {
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Every injective pairing of `pred` into `gt` slots, as the `gt` index per
/// prediction (`None` = unmatched); enumerated as permutations of the
/// padded square problem.
fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn rec(prefix: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if prefix.len() == used.len() {
            out.push(prefix.clone());
            return;
        }
        for j in 0..used.len() {
            if !used[j] {
                used[j] = true;
                prefix.push(j);
                rec(prefix, used, out);
                prefix.pop();
                used[j] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::new(), &mut vec![false; n], &mut out);
    out
}

/// All `(ΣIoU, matched (pred, gt, iou) pairs)` of optimal padded
/// assignments, found by exhaustive search.
pub fn exhaustive_optima(pred: &[PixelSet], gt: &[PixelSet]) -> (f64, Vec<Vec<(usize, usize, f64)>>) {
    let n = pred.len().max(gt.len());
    let mut best = f64::NEG_INFINITY;
    let mut optima: Vec<Vec<(usize, usize, f64)>> = Vec::new();
    for perm in permutations(n) {
        let mut pairs = Vec::new();
        let mut total = 0.0;
        for (p, &g) in perm.iter().enumerate() {
            if p < pred.len() && g < gt.len() {
                let iou = set_iou(&pred[p], &gt[g]);
                total += iou;
                pairs.push((p, g, iou));
            }
        }
        if total > best + 1e-12 {
            best = total;
            optima.clear();
            optima.push(pairs);
        } else if (total - best).abs() <= 1e-12 {
            optima.push(pairs);
        }
    }
    if n == 0 {
        best = 0.0;
        optima.push(Vec::new());
    }
    (best, optima)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NaiveScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub pq: f64,
}

pub fn naive_scores(pairs: &[(usize, usize, f64)], n_pred: usize, n_gt: usize, theta: f64) -> NaiveScores {
    let kept: Vec<f64> = pairs.iter().map(|p| p.2).filter(|&iou| iou >= theta).collect();
    let tp = kept.len() as f64;
    let fp = n_pred as f64 - tp;
    let fn_ = n_gt as f64 - tp;
    let precision = if n_pred == 0 { 0.0 } else { tp / n_pred as f64 };
    let recall = if n_gt == 0 { 0.0 } else { tp / n_gt as f64 };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    let denom = tp + fp / 2.0 + fn_ / 2.0;
    let pq = if denom == 0.0 { 0.0 } else { kept.iter().sum::<f64>() / denom };
    NaiveScores {
        precision,
        recall,
        f1,
        pq,
    }
}

/// AP with greedy matching in confidence order (ties by id), tied
/// confidences forming one operating point, and the precision envelope
/// integrated over recall.
pub fn naive_ap(pred: &[(u32, PixelSet, f64)], gt: &[PixelSet], theta: f64) -> f64 {
    if gt.is_empty() {
        return if pred.is_empty() { 1.0 } else { 0.0 };
    }
    let mut order: Vec<&(u32, PixelSet, f64)> = pred.iter().collect();
    order.sort_by(|a, b| b.2.partial_cmp(&a.2).unwrap().then(a.0.cmp(&b.0)));
    let mut used = vec![false; gt.len()];
    let mut flags = Vec::new();
    for (_, px, _) in &order {
        let mut best = None;
        let mut best_iou = -1.0;
        for (g, gs) in gt.iter().enumerate() {
            let iou = set_iou(px, gs);
            if !used[g] && iou >= theta && iou > best_iou {
                best = Some(g);
                best_iou = iou;
            }
        }
        if let Some(g) = best {
            used[g] = true;
        }
        flags.push(best.is_some());
    }
    let mut recall = Vec::new();
    let mut precision = Vec::new();
    let mut tp = 0;
    for i in 0..order.len() {
        if flags[i] {
            tp += 1;
        }
        let last_of_group = i + 1 == order.len() || order[i + 1].2 != order[i].2;
        if last_of_group {
            recall.push(tp as f64 / gt.len() as f64);
            precision.push(tp as f64 / (i + 1) as f64);
        }
    }
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut ap = 0.0;
    for i in 0..recall.len() {
        let prev = if i == 0 { 0.0 } else { recall[i - 1] };
        ap += (recall[i] - prev) * precision[i];
    }
    ap
}

// ---------------------------------------------------------------- structure

/// Number of 8-connected components of `pixels` in a `w×h` grid.
pub fn components_8(mask: &[bool], w: usize, h: usize) -> usize {
    let mut seen = vec![false; mask.len()];
    let mut count = 0;
    for s in 0..mask.len() {
        if !mask[s] || seen[s] {
            continue;
        }
        count += 1;
        seen[s] = true;
        let mut q = VecDeque::from([s]);
        while let Some(i) = q.pop_front() {
            let (x, y) = ((i % w) as i64, (i / w) as i64);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                        continue;
                    }
                    let j = ny as usize * w + nx as usize;
                    if mask[j] && !seen[j] {
                        seen[j] = true;
                        q.push_back(j);
                    }
                }
            }
        }
    }
    count
}

/// 4-connected background regions that touch neither the image border nor
/// the `margin` band; each is returned as its pixel count.
pub fn enclosed_background(labels: &[u32], w: usize, h: usize, margin: usize) -> Vec<usize> {
    let mut seen = vec![false; labels.len()];
    let mut out = Vec::new();
    for s in 0..labels.len() {
        if labels[s] != 0 || seen[s] {
            continue;
        }
        seen[s] = true;
        let mut q = VecDeque::from([s]);
        let mut size = 0;
        let mut open = false;
        while let Some(i) = q.pop_front() {
            size += 1;
            let (x, y) = (i % w, i / w);
            if x < margin || y < margin || x + margin >= w || y + margin >= h {
                open = true;
            }
            let mut visit = |j: usize| {
                if labels[j] == 0 && !seen[j] {
                    seen[j] = true;
                    q.push_back(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - w);
            }
            if y + 1 < h {
                visit(i + w);
            }
        }
        if !open {
            out.push(size);
        }
    }
    out
}
