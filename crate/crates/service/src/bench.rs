//! Wall-clock timing of scene preparation and per-frame mask production.

use std::fmt::Write as _;
use std::path::Path;
use std::time::{Duration, Instant};

use nalgebra::Vector3;
use splatseg_core::decoder::{segment_instance, DecoderError, SegmentationBackend};
use splatseg_core::projection::render_scene_mask;
use splatseg_core::prompt::ClickPrompt;
use splatseg_core::refine::{refine_binary, refine_mask, BinaryMask};
use splatseg_core::scene::{load_gaussian_ply, PlyFormatHint, SceneError};
use splatseg_core::synth::{cluster_scene, default_cameras, nearest_view, ClusterParams, ClusterScene};
use splatseg_core::CameraView;

use crate::params::SessionParams;

pub const DEFAULT_WARMUP: usize = 3;
pub const DEFAULT_RUNS: usize = 20;
pub const DEFAULT_INSTANCES: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Timing {
    pub runs: usize,
    pub median: Duration,
    pub min: Duration,
    pub max: Duration,
}

impl Timing {
    pub fn median_ms(&self) -> f64 {
        self.median.as_secs_f64() * 1e3
    }
}

/// Run `f` `warmup` times untimed, then `runs` timed times.
pub fn time_runs<T>(warmup: usize, runs: usize, mut f: impl FnMut() -> T) -> Timing {
    for _ in 0..warmup {
        std::hint::black_box(f());
    }
    let mut samples: Vec<Duration> = (0..runs.max(1))
        .map(|_| {
            let t = Instant::now();
            std::hint::black_box(f());
            t.elapsed()
        })
        .collect();
    samples.sort();
    let n = samples.len();
    let median = if n % 2 == 1 {
        samples[n / 2]
    } else {
        (samples[n / 2 - 1] + samples[n / 2]) / 2
    };
    Timing {
        runs: n,
        median,
        min: samples[0],
        max: samples[n - 1],
    }
}

/// Cluster layout for a scene of about `primitives` Gaussians in
/// `instances` balls. Balls grow with the count to keep density near the
/// default scene's, and the ring widens to keep them apart.
pub fn bench_cluster_params(primitives: usize, instances: usize) -> ClusterParams {
    let base = ClusterParams::default();
    let per = (primitives / instances.max(1)).max(1);
    let radius = base.cluster_radius * (per as f64 / base.points_per_cluster as f64).cbrt().max(1.0);
    let half_angle = std::f64::consts::PI / instances.max(2) as f64;
    ClusterParams {
        clusters: instances,
        points_per_cluster: per,
        cluster_radius: radius,
        ring_radius: base.ring_radius.max(2.5 * radius / half_angle.sin()),
        ..base
    }
}

pub fn bench_scene(primitives: usize, instances: usize) -> ClusterScene {
    cluster_scene(&bench_cluster_params(primitives, instances))
}

/// A click at the rounded projection of `p` in the view nearest to it.
pub fn click_toward(views: &[CameraView], p: &Vector3<f64>, instance_id: u32) -> Option<ClickPrompt> {
    let view = &views[nearest_view(views, p)?];
    let (u, v, _) = view.project(p)?;
    view.contains_pixel(u.round(), v.round())
        .then(|| ClickPrompt::new(view.view_id.clone(), u.round(), v.round(), instance_id))
}

pub fn center_clicks(synth: &ClusterScene, views: &[CameraView]) -> Vec<ClickPrompt> {
    synth
        .centers
        .iter()
        .enumerate()
        .filter_map(|(k, c)| click_toward(views, c, k as u32 + 1))
        .collect()
}

/// Load the scene from disk and segment one instance per click.
pub fn prepare(
    ply: &Path,
    views: &[CameraView],
    clicks: &[ClickPrompt],
    backend: &dyn SegmentationBackend,
    params: &SessionParams,
) -> Result<usize, PrepError> {
    let mut scene = load_gaussian_ply(ply, PlyFormatHint::Auto)?;
    scene.clear_labels();
    let decoder = params.decoder();
    let mut labeled = 0;
    for c in clicks {
        labeled += segment_instance(&mut scene, views, std::slice::from_ref(c), backend, &decoder)?.labeled;
    }
    Ok(labeled)
}

#[derive(Debug, thiserror::Error)]
pub enum PrepError {
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Decoder(#[from] DecoderError),
}

#[derive(Debug, Clone)]
pub struct RenderTimings {
    pub primitives: usize,
    pub threads: usize,
    pub render: Timing,
    /// All instances of one frame refined together.
    pub refine_joint: Timing,
    /// Median single-instance refinement, averaged over the frame's ids.
    pub refine_per_instance_ms: f64,
    pub instances: usize,
}

/// Time mask rendering and refinement on the first default view of a
/// labeled synthetic scene.
pub fn bench_render(primitives: usize, instances: usize, params: &SessionParams, warmup: usize, runs: usize) -> RenderTimings {
    let synth = bench_scene(primitives, instances);
    let scene = synth.labeled();
    let view = default_cameras().swap_remove(0);
    let render = time_runs(warmup, runs, || render_scene_mask(&scene, &view, params.rho2));
    let mask = render_scene_mask(&scene, &view, params.rho2);
    let refine_joint = time_runs(warmup, runs, || refine_mask(&mask, &params.refine));
    let ids = mask.instance_ids();
    let per: f64 = ids
        .iter()
        .map(|&id| {
            let b = BinaryMask::from_instance(&mask, id);
            time_runs(warmup, runs, || refine_binary(&b, &params.refine)).median_ms()
        })
        .sum();
    RenderTimings {
        primitives: scene.len(),
        threads: rayon::current_num_threads(),
        render,
        refine_joint,
        refine_per_instance_ms: if ids.is_empty() { 0.0 } else { per / ids.len() as f64 },
        instances: ids.len(),
    }
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

pub fn render_table(rows: &[RenderTimings]) -> String {
    let mut out = String::from(
        "primitives,threads,runs,render_median_ms,render_min_ms,render_max_ms,refine_joint_median_ms,refine_per_instance_ms,instances\n",
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{:.3},{:.3},{:.3},{:.3},{:.3},{}",
            r.primitives,
            r.threads,
            r.render.runs,
            r.render.median_ms(),
            ms(r.render.min),
            ms(r.render.max),
            r.refine_joint.median_ms(),
            r.refine_per_instance_ms,
            r.instances
        );
    }
    out
}

#[derive(Debug, Clone)]
pub struct PrepTimings {
    pub primitives: usize,
    pub threads: usize,
    pub instances: usize,
    pub prep: Timing,
}

pub fn prep_table(rows: &[PrepTimings]) -> String {
    let mut out = String::from("primitives,threads,instances,runs,prep_median_ms,prep_min_ms,prep_max_ms\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{:.3},{:.3},{:.3}",
            r.primitives,
            r.threads,
            r.instances,
            r.prep.runs,
            r.prep.median_ms(),
            ms(r.prep.min),
            ms(r.prep.max)
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_of_odd_and_even() {
        let mut seq = [5u64, 1, 3].into_iter().cycle();
        let t = time_runs(0, 3, || std::thread::sleep(Duration::from_millis(seq.next().unwrap())));
        assert!(t.min <= t.median && t.median <= t.max);
        assert_eq!(t.runs, 3);
    }

    #[test]
    fn bench_layout_keeps_clusters_apart() {
        for n in [10_000, 500_000] {
            let p = bench_cluster_params(n, 7);
            let chord = 2.0 * p.ring_radius * (std::f64::consts::PI / 7.0).sin();
            assert!(chord >= 5.0 * p.cluster_radius - 1e-12);
            assert!(p.cluster_radius >= ClusterParams::default().cluster_radius);
        }
    }
}
