//! Acceptance suite: one line per criterion, non-zero exit if any fails.
//!
//! Run a subset with `cargo test -p splatseg --test acceptance -- A2 A5`.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use splatseg::bench::{bench_scene, center_clicks, prepare, time_runs};
use splatseg::session::Target;
use splatseg::sweep::{run_sweep, sweep_csv};
use splatseg::{BackendSpec, SessionManager, SessionParams};
use splatseg_core::decoder::{crop_cylinder, make_batches, BatchSplit, DecoderParams, GeometricBackend};
use splatseg_core::metrics::{ap50, hungarian_match, instance_scores, iou3d_multi, semantic_2d, Instance};
use splatseg_core::projection::{project_gaussians, render_instance_mask, render_scene_mask, DEFAULT_RHO2_THRESHOLD};
use splatseg_core::prompt::{compute_weights, intersect_scene, AnchorPoint, Ray};
use splatseg_core::refine::{erode, refine_mask, BinaryMask, RefineParams};
use splatseg_core::scene::save_labeled_ply;
use splatseg_core::synth::{cluster_scene, default_cameras, write_dataset, ClusterParams};
use splatseg_core::{CameraView, GaussianPrimitive, GaussianScene, InstanceMask};

use common::{
    brute_force_mask, components_8, enclosed_background, exhaustive_optima, naive_ap, naive_miou_oa, naive_scores,
    random_rotation, ray_march_depth, unit_vector, PixelSet,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Status {
    Pass,
    Fail,
    /// A precondition of the criterion cannot be met on this host.
    Unverified,
}

struct Outcome {
    status: Status,
    detail: String,
}

fn verdict(ok: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        status: if ok { Status::Pass } else { Status::Fail },
        detail: detail.into(),
    }
}

fn secs(d: Duration) -> String {
    format!("{:.2} s", d.as_secs_f64())
}

fn ms(d: Duration) -> String {
    format!("{:.1} ms", d.as_secs_f64() * 1e3)
}

fn single_thread<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(f)
}

// ----------------------------------------------------------------------- A1

fn random_scene(rng: &mut ChaCha8Rng, n: usize) -> GaussianScene {
    let mut prims: Vec<GaussianPrimitive> = Vec::with_capacity(n);
    for _ in 0..n {
        let p = if !prims.is_empty() && rng.random_bool(0.05) {
            // exact duplicate center: same depth, same footprint
            prims[rng.random_range(0..prims.len())].position
        } else {
            Vector3::new(rng.random_range(-1.5..1.5f32), rng.random_range(-1.5..1.5f32), rng.random_range(-1.5..1.5f32))
        };
        let mut g = GaussianPrimitive::new(p, Vector3::repeat(0.02), 0.8, [0.5; 3]);
        g.instance_label = if rng.random_bool(0.3) { 0 } else { rng.random_range(1..=6) };
        prims.push(g);
    }
    GaussianScene::new(prims)
}

fn a1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xA1);
    let mut mismatches = 0;
    let mut covered = 0usize;
    for case in 0..200 {
        let n = rng.random_range(1..=1000);
        let scene = random_scene(&mut rng, n);
        let eye = unit_vector(&mut rng) * rng.random_range(1.2..4.0);
        let view = CameraView::look_at(
            format!("case_{case}"),
            64,
            64,
            rng.random_range(25.0..80.0),
            eye,
            Vector3::zeros(),
            if eye.x.abs() + eye.y.abs() < 1e-3 { Vector3::x() } else { Vector3::z() },
        )
        .unwrap();
        let tau = [0.0, 0.5, 1.0, 2.0, DEFAULT_RHO2_THRESHOLD, 6.25, 9.0][case % 7];
        let projected = project_gaussians(&scene, &view);
        let expected = brute_force_mask(&projected, 64, 64, tau);
        let got = render_instance_mask(&projected, &view, tau);
        let via_scene = render_scene_mask(&scene, &view, tau);
        if got.labels != expected || via_scene.labels != expected {
            mismatches += 1;
        }
        covered += expected.iter().filter(|&&l| l > 0).count();
    }
    let elapsed = start.elapsed();
    verdict(
        mismatches == 0 && elapsed < Duration::from_secs(60),
        format!(
            "rasterizer oracle: {} of 200 scenes bit-identical, {covered} labeled pixels checked, {} (limit 60 s)",
            200 - mismatches,
            secs(elapsed)
        ),
    )
}

// ----------------------------------------------------------------------- A2

fn gt_masks(labeled: &GaussianScene, views: &[CameraView]) -> Vec<InstanceMask> {
    views
        .iter()
        .map(|v| {
            let labels = brute_force_mask(&project_gaussians(labeled, v), v.width, v.height, DEFAULT_RHO2_THRESHOLD);
            InstanceMask::from_labels(v.width, v.height, labels).unwrap()
        })
        .collect()
}

fn a2() -> Outcome {
    let start = Instant::now();
    let params = ClusterParams::default();
    let synth = cluster_scene(&params);
    let views = default_cameras();
    let min_sep = synth
        .centers
        .iter()
        .enumerate()
        .flat_map(|(i, a)| synth.centers[i + 1..].iter().map(move |b| (a - b).norm()))
        .fold(f64::INFINITY, f64::min);
    let layout_ok = synth.centers.len() == 5 && params.points_per_cluster >= 2000 && min_sep >= 10.0 * synth.cluster_radius;

    let mut scene = synth.scene.clone();
    let clicks = center_clicks(&synth, &views);
    for c in &clicks {
        splatseg_core::decoder::segment_instance(
            &mut scene,
            &views,
            std::slice::from_ref(c),
            &GeometricBackend::default(),
            &DecoderParams::default(),
        )
        .unwrap();
    }
    let iou3d = iou3d_multi(&scene.labels(), &synth.gt_labels).unwrap();
    let exact = scene.labels() == synth.gt_labels;

    let gt = gt_masks(&synth.labeled(), &views);
    let refine = RefineParams::default();
    let pred: Vec<InstanceMask> = views
        .iter()
        .map(|v| refine_mask(&render_scene_mask(&scene, v, DEFAULT_RHO2_THRESHOLD), &refine))
        .collect();
    let miou = semantic_2d(&pred, &gt).unwrap().miou;
    let labels = |ms: &[InstanceMask]| ms.iter().map(|m| m.labels.clone()).collect::<Vec<_>>();
    let (naive_miou, _) = naive_miou_oa(&labels(&gt), &labels(&pred));
    let elapsed = start.elapsed();
    verdict(
        layout_ok
            && clicks.len() == 5
            && iou3d == 1.0
            && exact
            && miou >= 0.95
            && (miou - naive_miou).abs() < 1e-12
            && elapsed < Duration::from_secs(120),
        format!(
            "synthetic end-to-end: 3D IoU {iou3d} (labels exact: {exact}), refined 2D mIoU {miou:.4} over {} views \
             (naive {naive_miou:.4}), min center gap {:.1}× radius, {} (limit 120 s)",
            views.len(),
            min_sep / synth.cluster_radius,
            secs(elapsed)
        ),
    )
}

// ----------------------------------------------------------------------- A3

/// Disjoint instances from a painted label map, so each pixel belongs to at
/// most one instance per side.
fn paint(rng: &mut ChaCha8Rng, w: u32, h: u32, k: u32) -> InstanceMask {
    let mut m = InstanceMask::new(w, h);
    for id in 1..=k {
        let (x0, y0) = (rng.random_range(0..w - 2), rng.random_range(0..h - 2));
        let (x1, y1) = (rng.random_range(x0 + 1..w), rng.random_range(y0 + 1..h));
        for y in y0..=y1 {
            for x in x0..=x1 {
                m.set(x, y, id);
            }
        }
    }
    m
}

fn perturb(rng: &mut ChaCha8Rng, gt: &InstanceMask, k: u32) -> InstanceMask {
    let mut p = gt.clone();
    let (dx, dy) = (rng.random_range(-2i32..=2), rng.random_range(-2i32..=2));
    for y in 0..gt.height {
        for x in 0..gt.width {
            let (sx, sy) = (x as i32 - dx, y as i32 - dy);
            let inside = sx >= 0 && sy >= 0 && (sx as u32) < gt.width && (sy as u32) < gt.height;
            p.set(x, y, if inside { gt.get(sx as u32, sy as u32) } else { 0 });
        }
    }
    // drop, relabel, or add instances
    let ids = p.instance_ids();
    if let Some(&drop) = ids.get(rng.random_range(0..ids.len().max(1))) {
        if rng.random_bool(0.3) {
            p.labels.iter_mut().filter(|l| **l == drop).for_each(|l| *l = 0);
        }
    }
    let extra = rng.random_range(0..=(7 - k.min(7)).min(3));
    let blob = paint(rng, gt.width, gt.height, extra);
    for (o, &b) in p.labels.iter_mut().zip(&blob.labels) {
        if b > 0 {
            *o = 20 + b;
        }
    }
    // keep at most 7 instances
    let ids = p.instance_ids();
    for &id in ids.iter().skip(7) {
        p.labels.iter_mut().filter(|l| **l == id).for_each(|l| *l = 0);
    }
    p
}

fn instances(m: &InstanceMask) -> Vec<Instance> {
    splatseg_core::metrics::instances_from_mask(m)
}

fn pixel_sets(v: &[Instance]) -> Vec<PixelSet> {
    v.iter().map(|i| i.pixels.iter().copied().collect()).collect()
}

fn a3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xA3);
    let (mut sum_bad, mut score_bad, mut ap_bad) = (0, 0, 0);
    let mut worst = 0.0f64;
    for _ in 0..500 {
        let k = rng.random_range(0..=7);
        let gt = paint(&mut rng, 24, 20, k);
        let pred = perturb(&mut rng, &gt, k);
        let (gi, pi) = (instances(&gt), instances(&pred));
        let (gs, ps) = (pixel_sets(&gi), pixel_sets(&pi));
        assert!(gi.len() <= 7 && pi.len() <= 7);

        let (best, optima) = exhaustive_optima(&ps, &gs);
        let raw = hungarian_match(&pi, &gi, f64::MIN_POSITIVE).unwrap();
        let err = (raw.iou_sum() - best).abs();
        worst = worst.max(err);
        if err > 1e-9 {
            sum_bad += 1;
        }

        let m = hungarian_match(&pi, &gi, 0.5).unwrap();
        let got = instance_scores(&m);
        let any = optima.iter().any(|pairs| {
            let want = naive_scores(pairs, ps.len(), gs.len(), 0.5);
            (got.precision - want.precision).abs() <= 1e-9
                && (got.recall - want.recall).abs() <= 1e-9
                && (got.f1 - want.f1).abs() <= 1e-9
                && (got.pq - want.pq).abs() <= 1e-9
        });
        if !any {
            score_bad += 1;
        }

        // confidences on a coarse grid so ties occur
        let conf: Vec<f64> = pi.iter().map(|_| rng.random_range(1..=5) as f64 / 5.0).collect();
        let scored: Vec<(Instance, f64)> = pi.iter().cloned().zip(conf.iter().copied()).collect();
        let naive_in: Vec<(u32, PixelSet, f64)> =
            pi.iter().zip(&ps).zip(&conf).map(|((i, s), &c)| (i.id, s.clone(), c)).collect();
        if (ap50(&scored, &gi, 0.5) - naive_ap(&naive_in, &gs, 0.5)).abs() > 1e-9 {
            ap_bad += 1;
        }
    }
    verdict(
        sum_bad == 0 && score_bad == 0 && ap_bad == 0,
        format!(
            "metric oracles on 500 fixtures: ΣIoU mismatches {sum_bad} (max err {worst:.1e}), \
             P/R/F1/PQ mismatches {score_bad}, AP@50 mismatches {ap_bad}"
        ),
    )
}

// ----------------------------------------------------------------------- A4

fn noisy_mask(rng: &mut ChaCha8Rng) -> InstanceMask {
    let (w, h) = (rng.random_range(48..112), rng.random_range(40..96));
    let mut m = InstanceMask::new(w, h);
    let k = rng.random_range(1..=6);
    for id in 1..=k {
        let (cx, cy) = (rng.random_range(-5.0..w as f64 + 5.0), rng.random_range(-5.0..h as f64 + 5.0));
        let (rx, ry) = (rng.random_range(4.0..22.0), rng.random_range(4.0..22.0));
        for y in 0..h {
            for x in 0..w {
                let (dx, dy) = ((x as f64 - cx) / rx, (y as f64 - cy) / ry);
                if dx * dx + dy * dy <= 1.0 {
                    m.set(x, y, id);
                }
            }
        }
        // holes inside the blob
        for _ in 0..rng.random_range(0..4) {
            let (hx, hy) = (cx + rng.random_range(-0.5..0.5) * rx, cy + rng.random_range(-0.5..0.5) * ry);
            let r = rng.random_range(1.0..4.0);
            for y in 0..h {
                for x in 0..w {
                    let (dx, dy) = (x as f64 - hx, y as f64 - hy);
                    if dx * dx + dy * dy <= r * r && m.get(x, y) == id {
                        m.set(x, y, 0);
                    }
                }
            }
        }
    }
    // specks of random ids, including ids with no blob
    for _ in 0..rng.random_range(0..40) {
        let (x, y) = (rng.random_range(0..w), rng.random_range(0..h));
        m.set(x, y, rng.random_range(0..=k + 1));
    }
    m
}

fn a4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xA4);
    let params = RefineParams::default();
    let (mut split, mut holes, mut new_ids) = (0, 0, 0);
    let mut instances_checked = 0;
    for _ in 0..100 {
        let m = noisy_mask(&mut rng);
        let r = refine_mask(&m, &params);
        let before: BTreeSet<u32> = m.instance_ids().into_iter().collect();
        let (w, h) = (r.width as usize, r.height as usize);
        for id in r.instance_ids() {
            instances_checked += 1;
            if !before.contains(&id) {
                new_ids += 1;
            }
            let b: Vec<bool> = r.labels.iter().map(|&l| l == id).collect();
            if components_8(&b, w, h) != 1 {
                split += 1;
            }
        }
        if !enclosed_background(&r.labels, w, h, params.edge_margin as usize).is_empty() {
            holes += 1;
        }
    }
    verdict(
        split == 0 && holes == 0 && new_ids == 0,
        format!(
            "refinement structure on 100 masks ({instances_checked} instances): split instances {split}, \
             masks with enclosed holes off the band {holes}, new ids {new_ids}"
        ),
    )
}

// ----------------------------------------------------------------------- A5

fn a5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xA5);
    let tau = DecoderParams::default().opacity_threshold;

    // anchors against the dense march
    let (mut agree, mut hits, mut worst) = (0, 0, 0.0f64);
    for case in 0..100 {
        let ray = Ray {
            origin: Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)),
            direction: unit_vector(&mut rng),
        };
        let count = if case < 50 { 1 } else { 2 };
        let mut prims = Vec::new();
        let t1 = rng.random_range(1.0..5.0);
        for j in 0..count {
            let t = if j == 0 { t1 } else { t1 + rng.random_range(-0.6..1.0) };
            let scale = Vector3::new(rng.random_range(0.05..0.3f32), rng.random_range(0.05..0.3f32), rng.random_range(0.05..0.3f32));
            let off = unit_vector(&mut rng) * rng.random_range(0.0..0.5) * scale.min() as f64;
            let mu = (ray.at(t) + off).cast::<f32>();
            let opacity = if count == 1 { rng.random_range(0.88..0.999f32) } else { rng.random_range(0.55..0.99f32) };
            let mut g = GaussianPrimitive::new(mu, scale, opacity, [0.5; 3]);
            g.rotation = random_rotation(&mut rng);
            prims.push(g);
        }
        let oracle = ray_march_depth(&prims, &ray, 8.0, 1e-3, tau);
        let got = intersect_scene(&GaussianScene::new(prims), &ray, tau).ok().map(|a| a.depth);
        match (got, oracle) {
            (Some(a), Some(b)) => {
                hits += 1;
                worst = worst.max((a - b).abs());
                if (a - b).abs() <= 0.01 {
                    agree += 1;
                }
            }
            (None, None) => agree += 1,
            _ => {}
        }
    }

    // weights at 0, σ and 3σ: positions are integers in scene units and the
    // unit scale makes one unit equal σ
    let sigma = DecoderParams::default().sigma_m;
    let mut weight_err = 0.0f64;
    let mut rounded_err = 0.0f64;
    for axis in 0..3 {
        for sign in [1.0f32, -1.0] {
            let at = |d: f32| {
                let mut p = Vector3::zeros();
                p[axis] = sign * d;
                GaussianPrimitive::new(p, Vector3::repeat(0.01), 0.5, [0.0; 3])
            };
            let mut scene = GaussianScene::new(vec![at(0.0), at(1.0), at(3.0)]);
            scene.unit_scale = sigma;
            let w = compute_weights(&scene, &Vector3::zeros(), sigma).unwrap().weights;
            for (got, want) in w.iter().zip([1.0, (-0.5f64).exp(), (-4.5f64).exp()]) {
                weight_err = weight_err.max((got - want).abs());
            }
            rounded_err = rounded_err.max((w[1] - 0.606531).abs()).max((w[2] - 0.011109).abs());
        }
    }

    // cylinder boundaries are inclusive; the next representable step out is not
    let (r, h) = (DecoderParams::default().radius_m, DecoderParams::default().height_m);
    let just_out = |v: f64| (v as f32).next_up();
    let pts: [(Vector3<f32>, bool); 8] = [
        (Vector3::new(r as f32, 0.0, 0.0), true),
        (Vector3::new(0.0, -(r as f32), 0.0), true),
        (Vector3::new(0.0, 0.0, (h / 2.0) as f32), true),
        (Vector3::new(r as f32, 0.0, -(h / 2.0) as f32), true),
        (Vector3::new(just_out(r), 0.0, 0.0), false),
        (Vector3::new(0.0, 0.0, just_out(h / 2.0)), false),
        (Vector3::new(0.0, 0.0, -just_out(h / 2.0)), false),
        (Vector3::new(0.0, 0.0, 0.0), true),
    ];
    let scene = GaussianScene::new(pts.iter().map(|(p, _)| GaussianPrimitive::new(*p, Vector3::repeat(0.01), 0.5, [0.0; 3])).collect());
    let anchor = AnchorPoint {
        position: Vector3::zeros(),
        ray: Ray { origin: Vector3::new(0.0, 0.0, 5.0), direction: -Vector3::z() },
        depth: 5.0,
    };
    let roi = crop_cylinder(&scene, &anchor, r, h, &Vector3::z()).unwrap();
    let expected: Vec<usize> = pts.iter().enumerate().filter(|(_, p)| p.1).map(|(i, _)| i).collect();
    let cylinder_ok = roi.indices == expected;

    // batching
    let mut batch_ok = true;
    let mut batch_counts = Vec::new();
    for n in [1usize, 8192, 8193, 20_000, 1_000_000] {
        let batches = make_batches(n, 8192, 42, BatchSplit::Disjoint).unwrap();
        let mut seen = vec![false; n];
        let mut dup = false;
        for b in &batches {
            for &i in b {
                dup |= std::mem::replace(&mut seen[i], true);
            }
        }
        batch_ok &= batches.len() == n.div_ceil(8192)
            && batches.iter().all(|b| !b.is_empty() && b.len() <= 8192)
            && !dup
            && seen.iter().all(|&s| s);
        batch_counts.push(format!("{n}→{}", batches.len()));
    }

    verdict(
        agree == 100 && weight_err <= 1e-9 && rounded_err <= 1e-6 && cylinder_ok && batch_ok,
        format!(
            "anchors agree with dense march on {agree}/100 rays ({hits} hits, max |Δt| {worst:.4}); \
             weight err {weight_err:.1e}; cylinder boundaries {}; batches {}",
            if cylinder_ok { "inclusive" } else { "WRONG" },
            batch_counts.join(", ")
        ),
    )
}

// ----------------------------------------------------------------------- A6

fn a6() -> Outcome {
    let synth = bench_scene(500_000, 7);
    let views = default_cameras();
    let clicks = center_clicks(&synth, &views);
    let dir = tempfile::tempdir().unwrap();
    let ply = dir.path().join("scene.ply");
    save_labeled_ply(&synth.scene, &ply).unwrap();
    let params = SessionParams::default();
    let backend = GeometricBackend::default();

    let t = Instant::now();
    let labeled = single_thread(|| prepare(&ply, &views, &clicks, &backend, &params)).unwrap();
    let prep = t.elapsed();
    let prep_ok = clicks.len() == 7 && labeled > 0 && prep < Duration::from_secs(60);

    let scene = synth.labeled();
    let view = &views[0];
    let render_1 = single_thread(|| time_runs(3, 20, || render_scene_mask(&scene, view, params.rho2)));
    let pool8 = rayon::ThreadPoolBuilder::new().num_threads(8).build().unwrap();
    let render_8 = pool8.install(|| time_runs(3, 20, || render_scene_mask(&scene, view, params.rho2)));
    let mask = render_scene_mask(&scene, view, params.rho2);
    let refine = single_thread(|| time_runs(3, 20, || refine_mask(&mask, &params.refine)));
    let instances = mask.instance_ids().len();

    let cores = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    let single_ok = prep_ok
        && render_1.median < Duration::from_millis(250)
        && refine.median < Duration::from_millis(500)
        && instances == 7;
    let parallel_ok = render_8.median < Duration::from_millis(60);
    let status = match (single_ok, parallel_ok) {
        (false, _) => Status::Fail,
        (true, true) => Status::Pass,
        (true, false) if cores < 8 => Status::Unverified,
        (true, false) => Status::Fail,
    };
    Outcome {
        status,
        detail: format!(
            "performance on {} primitives: prep {} single-threaded ({labeled} labeled, limit 60 s); render median {} on 1 thread \
             (limit 250 ms), {} on 8 threads (limit 60 ms, host has {cores} core(s)); refine {instances}-instance mask {} (limit 500 ms)",
            synth.scene.len(),
            secs(prep),
            ms(render_1.median),
            ms(render_8.median),
            ms(refine.median)
        ),
    }
}

// ----------------------------------------------------------------------- A7

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

/// Write the dataset, segment every cluster through a session, export, and
/// run a click sweep; everything from scratch.
fn full_run() -> (BTreeMap<String, Vec<u8>>, String) {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().join("Synth");
    let synth = cluster_scene(&ClusterParams::default());
    let views = default_cameras();
    write_dataset(&root, "Synth", &synth.labeled(), &views, DEFAULT_RHO2_THRESHOLD).unwrap();

    let params = SessionParams {
        seed: 1234,
        batch_cap: 1024,
        ..SessionParams::default()
    };
    let manager = SessionManager::new(params.clone(), BackendSpec::Baseline);
    let id = manager
        .create(&serde_json::from_value(serde_json::json!({ "scene_path": root })).unwrap())
        .unwrap();
    let session = manager.get(&id).unwrap();
    {
        let mut s = session.write().unwrap();
        for c in center_clicks(&synth, &views) {
            s.add_click(&c.view_id, c.u, c.v, Target::NEW).unwrap();
        }
        s.export(&tmp.path().join("export")).unwrap();
    }
    let rows = run_sweep(&root, &[5, 10], &params, &BackendSpec::Baseline, params.seed).unwrap();
    (snapshot(&tmp.path().join("export")), sweep_csv(&rows))
}

fn a7() -> Outcome {
    let (files_a, csv_a) = full_run();
    let (files_b, csv_b) = full_run();
    let differing: Vec<&String> = files_a.keys().filter(|k| files_a.get(*k) != files_b.get(*k)).collect();
    let has_all = files_a.contains_key("labeled_scene.ply") && files_a.keys().filter(|k| k.starts_with("masks/")).count() == 8;
    verdict(
        differing.is_empty() && files_a.len() == files_b.len() && has_all && csv_a == csv_b,
        format!(
            "determinism: {} exported files, {} differ; clicks-sweep CSV {}",
            files_a.len(),
            differing.len(),
            if csv_a == csv_b { "identical" } else { "DIFFERS" }
        ),
    )
}

// ----------------------------------------------------------------------- A8

fn a8() -> Outcome {
    let synth = cluster_scene(&ClusterParams::default());
    let views = default_cameras();
    let labeled = synth.labeled();
    let gt = gt_masks(&labeled, &views);
    let manager = SessionManager::new(SessionParams::default(), BackendSpec::Baseline);
    let id = manager
        .insert(synth.scene.clone(), views.clone(), SessionParams::default(), BackendSpec::Baseline)
        .unwrap();
    let session = manager.get(&id).unwrap();

    // interior = ground-truth mask eroded by 2 px
    let mut pools: BTreeMap<u32, Vec<(usize, u32, u32)>> = BTreeMap::new();
    for (vi, m) in gt.iter().enumerate() {
        for k in m.instance_ids() {
            let inner = erode(&BinaryMask::from_instance(m, k), 2);
            for y in 0..m.height {
                for x in 0..m.width {
                    if inner.get(x, y) {
                        pools.entry(k).or_default().push((vi, x, y));
                    }
                }
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0xA8);
    let mut instance_of: BTreeMap<u32, u32> = BTreeMap::new();
    let (mut ok, mut unfaithful, mut rejected, mut warned) = (0, 0, 0, 0);
    let keys: Vec<u32> = pools.keys().copied().collect();
    for _ in 0..100 {
        let k = keys[rng.random_range(0..keys.len())];
        let pool = &pools[&k];
        let (vi, x, y) = pool[rng.random_range(0..pool.len())];
        let target = instance_of.get(&k).map_or(Target::NEW, |&i| Target::Existing(i));
        let mut s = session.write().unwrap();
        match s.add_click(&views[vi].view_id, x as f64, y as f64, target) {
            Ok(out) => {
                instance_of.insert(k, out.instance_id);
                ok += 1;
                warned += out.warning.is_some() as usize;
                if out.mask.get(x, y) != out.instance_id {
                    unfaithful += 1;
                }
            }
            Err(_) => rejected += 1,
        }
    }
    verdict(
        unfaithful == 0 && ok > 0,
        format!(
            "faithfulness: {ok}/100 clicks succeeded ({rejected} rejected), {unfaithful} refined masks miss the click id, \
             {warned} warnings"
        ),
    )
}

// --------------------------------------------------------------------- main

type Check = (&'static str, fn() -> Outcome);

fn main() -> ExitCode {
    let checks: [Check; 8] = [("A1", a1), ("A2", a2), ("A3", a3), ("A4", a4), ("A5", a5), ("A6", a6), ("A7", a7), ("A8", a8)];
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = false;
    for (name, check) in checks {
        if !filters.is_empty() && !filters.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            verdict(false, format!("panicked: {msg}"))
        });
        let label = match outcome.status {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::Unverified => "UNVERIFIED",
        };
        failed |= outcome.status == Status::Fail;
        println!("{name} {label}: {} [{}]", outcome.detail, secs(start.elapsed()));
    }
    if failed {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
