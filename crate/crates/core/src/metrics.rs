//! Evaluation: 3D label IoU, 2D semantic scores (mIoU, OA) and instance
//! scores (Hungarian matching, P/R/F1, PQ, AP@50).

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::mask::InstanceMask;
use crate::scene::{load_gaussian_ply, DatasetScene, PlyFormatHint, SceneError};

pub const DEFAULT_MATCH_THRESHOLD: f64 = 0.5;

#[derive(Debug, thiserror::Error)]
pub enum MetricError {
    #[error("length mismatch: {0}")]
    Alignment(String),
    #[error("metric undefined: {0}")]
    Undefined(String),
    #[error("predictions missing for views: {}", .0.join(", "))]
    MissingViews(Vec<String>),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Scene(#[from] SceneError),
}

/// Square count grid indexed `(truth, prediction)`, grown on demand.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConfusionMatrix {
    size: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(size: usize) -> Self {
        Self {
            size,
            counts: vec![0; size * size],
        }
    }

    pub fn class_count(&self) -> usize {
        self.size
    }

    fn grow(&mut self, size: usize) {
        if size <= self.size {
            return;
        }
        let mut counts = vec![0; size * size];
        for t in 0..self.size {
            counts[t * size..t * size + self.size].copy_from_slice(&self.counts[t * self.size..(t + 1) * self.size]);
        }
        self.size = size;
        self.counts = counts;
    }

    pub fn add(&mut self, truth: u32, pred: u32, n: u64) {
        self.grow(truth.max(pred) as usize + 1);
        self.counts[truth as usize * self.size + pred as usize] += n;
    }

    pub fn get(&self, truth: u32, pred: u32) -> u64 {
        let (t, p) = (truth as usize, pred as usize);
        if t < self.size && p < self.size {
            self.counts[t * self.size + p]
        } else {
            0
        }
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        self.grow(other.size);
        for t in 0..other.size {
            for p in 0..other.size {
                self.counts[t * self.size + p] += other.counts[t * other.size + p];
            }
        }
    }

    pub fn trace(&self) -> u64 {
        (0..self.size).map(|c| self.counts[c * self.size + c]).sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn row_sum(&self, truth: u32) -> u64 {
        (0..self.size as u32).map(|p| self.get(truth, p)).sum()
    }

    pub fn col_sum(&self, pred: u32) -> u64 {
        (0..self.size as u32).map(|t| self.get(t, pred)).sum()
    }

    /// `TP / (TP + FP + FN)`, or `None` for a class absent from both sides.
    pub fn iou(&self, class: u32) -> Option<f64> {
        let tp = self.get(class, class);
        let union = self.row_sum(class) + self.col_sum(class) - tp;
        (union > 0).then(|| tp as f64 / union as f64)
    }
}

/// Binary 3D IoU: mean of background and foreground IoU over primitives.
/// A class absent from both arrays scores 1.
pub fn iou3d(pred: &[bool], gt: &[bool]) -> Result<f64, MetricError> {
    if pred.len() != gt.len() {
        return Err(MetricError::Alignment(format!("{} predicted vs {} ground-truth labels", pred.len(), gt.len())));
    }
    let mut cm = ConfusionMatrix::new(2);
    for (&p, &g) in pred.iter().zip(gt) {
        cm.add(g as u32, p as u32, 1);
    }
    Ok((cm.iou(0).unwrap_or(1.0) + cm.iou(1).unwrap_or(1.0)) / 2.0)
}

/// Mean over ground-truth instance ids `k ≥ 1` of the binary IoU of both
/// label arrays binarized at `k`.
pub fn iou3d_multi(pred: &[u32], gt: &[u32]) -> Result<f64, MetricError> {
    if pred.len() != gt.len() {
        return Err(MetricError::Alignment(format!("{} predicted vs {} ground-truth labels", pred.len(), gt.len())));
    }
    let ids: std::collections::BTreeSet<u32> = gt.iter().copied().filter(|&l| l > 0).collect();
    if ids.is_empty() {
        return Err(MetricError::Undefined("no ground-truth instances".into()));
    }
    let mut sum = 0.0;
    for &k in &ids {
        let p: Vec<bool> = pred.iter().map(|&l| l == k).collect();
        let g: Vec<bool> = gt.iter().map(|&l| l == k).collect();
        sum += iou3d(&p, &g)?;
    }
    Ok(sum / ids.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticScores {
    pub miou: f64,
    pub oa: f64,
    pub per_class_iou: BTreeMap<u32, f64>,
}

/// Accumulate one confusion matrix over all mask pairs.
pub fn confusion_2d(pred: &[InstanceMask], gt: &[InstanceMask]) -> Result<ConfusionMatrix, MetricError> {
    if pred.len() != gt.len() {
        return Err(MetricError::Alignment(format!("{} predicted vs {} ground-truth masks", pred.len(), gt.len())));
    }
    let mut cm = ConfusionMatrix::new(1);
    for (i, (p, g)) in pred.iter().zip(gt).enumerate() {
        if (p.width, p.height) != (g.width, g.height) {
            return Err(MetricError::Alignment(format!(
                "mask pair {i}: {}x{} vs {}x{}",
                p.width, p.height, g.width, g.height
            )));
        }
        let mut local: BTreeMap<(u32, u32), u64> = BTreeMap::new();
        for (&pl, &gl) in p.labels.iter().zip(&g.labels) {
            *local.entry((gl, pl)).or_default() += 1;
        }
        for ((t, q), n) in local {
            cm.add(t, q, n);
        }
    }
    Ok(cm)
}

/// mIoU over classes `≥ 1` seen in prediction or truth, and overall pixel
/// accuracy `trace / total`. With no such class the mIoU is 1.
pub fn semantic_from_confusion(cm: &ConfusionMatrix) -> SemanticScores {
    let mut per_class_iou = BTreeMap::new();
    for c in 1..cm.class_count() as u32 {
        if let Some(iou) = cm.iou(c) {
            per_class_iou.insert(c, iou);
        }
    }
    let miou = if per_class_iou.is_empty() {
        1.0
    } else {
        per_class_iou.values().sum::<f64>() / per_class_iou.len() as f64
    };
    let total = cm.total();
    let oa = if total == 0 { 1.0 } else { cm.trace() as f64 / total as f64 };
    SemanticScores { miou, oa, per_class_iou }
}

pub fn semantic_2d(pred: &[InstanceMask], gt: &[InstanceMask]) -> Result<SemanticScores, MetricError> {
    Ok(semantic_from_confusion(&confusion_2d(pred, gt)?))
}

/// An instance as a sorted list of pixel (or primitive) indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Instance {
    pub id: u32,
    pub pixels: Vec<u32>,
}

impl Instance {
    pub fn new(id: u32, mut pixels: Vec<u32>) -> Self {
        pixels.sort_unstable();
        pixels.dedup();
        Self { id, pixels }
    }

    pub fn iou(&self, other: &Instance) -> f64 {
        let (a, b) = (&self.pixels, &other.pixels);
        let (mut i, mut j, mut inter) = (0, 0, 0usize);
        while i < a.len() && j < b.len() {
            match a[i].cmp(&b[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    inter += 1;
                    i += 1;
                    j += 1;
                }
            }
        }
        let union = a.len() + b.len() - inter;
        if union == 0 {
            0.0
        } else {
            inter as f64 / union as f64
        }
    }
}

/// Split a mask into its non-zero instances, ascending by id.
pub fn instances_from_mask(mask: &InstanceMask) -> Vec<Instance> {
    let mut by_id: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
    for (i, &l) in mask.labels.iter().enumerate() {
        if l > 0 {
            by_id.entry(l).or_default().push(i as u32);
        }
    }
    by_id.into_iter().map(|(id, pixels)| Instance { id, pixels }).collect()
}

/// Minimum-cost perfect assignment on a square matrix (Kuhn–Munkres with
/// row/column potentials). Returns the column assigned to each row.
pub fn min_cost_assignment(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    if n == 0 {
        return Vec::new();
    }
    // 1-based arrays with a virtual column 0
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut row_of = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let reduced = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if reduced < minv[j] {
                    minv[j] = reduced;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        if row_of[j] > 0 {
            assignment[row_of[j] - 1] = j - 1;
        }
    }
    assignment
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceMatching {
    /// `(gt_id, pred_id, iou)` with `iou ≥ threshold`.
    pub pairs: Vec<(u32, u32, f64)>,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub threshold: f64,
}

impl InstanceMatching {
    pub fn iou_sum(&self) -> f64 {
        self.pairs.iter().map(|p| p.2).sum()
    }
}

/// Globally optimal one-to-one matching minimizing `Σ (1 − IoU)`; pairs
/// below `threshold` are dropped after the assignment.
pub fn hungarian_match(pred: &[Instance], gt: &[Instance], threshold: f64) -> Result<InstanceMatching, MetricError> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(MetricError::InvalidParameter(format!("match threshold {threshold} not in (0, 1]")));
    }
    let n = pred.len().max(gt.len());
    let mut iou = vec![vec![0.0; pred.len()]; gt.len()];
    let mut cost = vec![vec![1.0; n]; n];
    for (g, gi) in gt.iter().enumerate() {
        for (p, pi) in pred.iter().enumerate() {
            iou[g][p] = gi.iou(pi);
            cost[g][p] = 1.0 - iou[g][p];
        }
    }
    let assignment = min_cost_assignment(&cost);
    let mut pairs = Vec::new();
    for (g, &p) in assignment.iter().enumerate() {
        if g < gt.len() && p < pred.len() && iou[g][p] >= threshold {
            pairs.push((gt[g].id, pred[p].id, iou[g][p]));
        }
    }
    let tp = pairs.len();
    Ok(InstanceMatching {
        pairs,
        tp,
        fp: pred.len() - tp,
        fn_: gt.len() - tp,
        threshold,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InstanceScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub pq: f64,
}

fn ratio(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

pub fn scores_from_counts(tp: usize, fp: usize, fn_: usize, iou_sum: f64) -> InstanceScores {
    let (tp, fp, fn_) = (tp as f64, fp as f64, fn_ as f64);
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    InstanceScores {
        precision,
        recall,
        f1: ratio(2.0 * precision * recall, precision + recall),
        pq: ratio(iou_sum, tp + 0.5 * fp + 0.5 * fn_),
    }
}

pub fn instance_scores(matching: &InstanceMatching) -> InstanceScores {
    scores_from_counts(matching.tp, matching.fp, matching.fn_, matching.iou_sum())
}

/// A ranked prediction after greedy matching.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub confidence: f64,
    pub true_positive: bool,
}

/// Greedy confidence-ordered matching: each prediction (descending
/// confidence, ties by id) takes the best still-unmatched gt with
/// `IoU ≥ threshold`.
pub fn rank_detections(pred: &[(Instance, f64)], gt: &[Instance], threshold: f64) -> Vec<Detection> {
    let mut order: Vec<usize> = (0..pred.len()).collect();
    order.sort_by(|&a, &b| pred[b].1.total_cmp(&pred[a].1).then(pred[a].0.id.cmp(&pred[b].0.id)));
    let mut taken = vec![false; gt.len()];
    order
        .into_iter()
        .map(|k| {
            let (inst, confidence) = &pred[k];
            let mut best: Option<(usize, f64)> = None;
            for (g, gi) in gt.iter().enumerate() {
                if taken[g] {
                    continue;
                }
                let iou = inst.iou(gi);
                if iou >= threshold && best.is_none_or(|(_, b)| iou > b) {
                    best = Some((g, iou));
                }
            }
            if let Some((g, _)) = best {
                taken[g] = true;
            }
            Detection {
                confidence: *confidence,
                true_positive: best.is_some(),
            }
        })
        .collect()
}

/// All-point interpolated average precision over detections already in rank
/// order. Detections with equal confidence form a single curve point.
pub fn average_precision(ranked: &[Detection], n_gt: usize) -> f64 {
    if n_gt == 0 {
        return if ranked.is_empty() { 1.0 } else { 0.0 };
    }
    let mut points: Vec<(f64, f64)> = Vec::new();
    let (mut tp, mut seen) = (0usize, 0usize);
    for (i, d) in ranked.iter().enumerate() {
        seen += 1;
        tp += d.true_positive as usize;
        let group_ends = ranked.get(i + 1).is_none_or(|next| next.confidence != d.confidence);
        if group_ends {
            points.push((tp as f64 / n_gt as f64, tp as f64 / seen as f64));
        }
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for i in 0..points.len() {
        let interp = points[i..].iter().map(|p| p.1).fold(0.0, f64::max);
        ap += (points[i].0 - prev_recall) * interp;
        prev_recall = points[i].0;
    }
    ap
}

pub fn ap50(pred: &[(Instance, f64)], gt: &[Instance], threshold: f64) -> f64 {
    average_precision(&rank_detections(pred, gt, threshold), gt.len())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub dataset: String,
    pub method: String,
    pub views: usize,
    pub iou3d: Option<f64>,
    pub miou2d: f64,
    pub oa: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub pq: f64,
    pub ap50: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub per_class_iou: BTreeMap<u32, f64>,
}

pub const CSV_HEADER: &str = "Dataset,Method,3D-IoU,2D-mIoU,OA,Pr,Recall,F1-score,PQ,AP50";

fn pct(v: f64) -> String {
    format!("{:.2}", v * 100.0)
}

impl MetricReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// One table row in percent; a missing 3D score prints as `-`.
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.dataset,
            self.method,
            self.iou3d.map(pct).unwrap_or_else(|| "-".into()),
            pct(self.miou2d),
            pct(self.oa),
            pct(self.precision),
            pct(self.recall),
            pct(self.f1),
            pct(self.pq),
            pct(self.ap50)
        )
    }

    pub fn to_csv(reports: &[MetricReport]) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in reports {
            let _ = writeln!(out, "{}", r.csv_row());
        }
        out
    }
}

/// Score aligned `(gt, pred)` mask pairs plus optional 3D labels.
///
/// Instance scores are matched per view and pooled: TP/FP/FN and the
/// matched IoU sum are summed over views, and AP@50 ranks every predicted
/// instance of every view (confidence 1) against the pooled gt count.
pub fn evaluate_masks(
    dataset: &str,
    method: &str,
    gt: &[InstanceMask],
    pred: &[InstanceMask],
    labels_3d: Option<(&[u32], &[u32])>,
) -> Result<MetricReport, MetricError> {
    let semantic = semantic_2d(pred, gt)?;
    let (mut tp, mut fp, mut fn_, mut iou_sum) = (0, 0, 0, 0.0);
    let mut detections = Vec::new();
    let mut n_gt = 0;
    for (g, p) in gt.iter().zip(pred) {
        let gi = instances_from_mask(g);
        let pi = instances_from_mask(p);
        let m = hungarian_match(&pi, &gi, DEFAULT_MATCH_THRESHOLD)?;
        tp += m.tp;
        fp += m.fp;
        fn_ += m.fn_;
        iou_sum += m.iou_sum();
        let scored: Vec<(Instance, f64)> = pi.into_iter().map(|i| (i, 1.0)).collect();
        detections.extend(rank_detections(&scored, &gi, DEFAULT_MATCH_THRESHOLD));
        n_gt += gi.len();
    }
    let scores = scores_from_counts(tp, fp, fn_, iou_sum);
    let iou3d = match labels_3d {
        Some((pred3, gt3)) => Some(iou3d_multi(pred3, gt3)?),
        None => None,
    };
    Ok(MetricReport {
        dataset: dataset.to_string(),
        method: method.to_string(),
        views: gt.len(),
        iou3d,
        miou2d: semantic.miou,
        oa: semantic.oa,
        precision: scores.precision,
        recall: scores.recall,
        f1: scores.f1,
        pq: scores.pq,
        ap50: average_precision(&detections, n_gt),
        tp,
        fp,
        fn_,
        per_class_iou: semantic.per_class_iou,
    })
}

/// Evaluate predicted masks (keyed by file stem) against a dataset's
/// ground truth; 3D labels are scored against the annotated model when
/// given.
pub fn evaluate_run(
    dataset: &DatasetScene,
    method: &str,
    pred_masks: &BTreeMap<String, InstanceMask>,
    pred_3d_labels: Option<&[u32]>,
) -> Result<MetricReport, MetricError> {
    let stems = dataset.evaluation_stems();
    let missing: Vec<String> = stems.iter().filter(|s| !pred_masks.contains_key(*s)).cloned().collect();
    if !missing.is_empty() {
        return Err(MetricError::MissingViews(missing));
    }
    let mut gt = Vec::with_capacity(stems.len());
    let mut pred = Vec::with_capacity(stems.len());
    for s in &stems {
        gt.push(dataset.load_mask(s)?);
        pred.push(pred_masks[s].clone());
    }
    let gt_3d = match pred_3d_labels {
        Some(_) => {
            let path = dataset
                .model_path
                .as_ref()
                .ok_or_else(|| MetricError::Undefined("dataset has no annotated model for 3D IoU".into()))?;
            Some(load_gaussian_ply(path, PlyFormatHint::Auto)?.labels())
        }
        None => None,
    };
    let name = dataset
        .root
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let labels_3d = pred_3d_labels.zip(gt_3d.as_deref());
    evaluate_masks(&name, method, &gt, &pred, labels_3d)
}
