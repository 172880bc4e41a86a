//! Label splatting: project primitive centers into a view and stamp the
//! first labeled primitive (front to back) within `ρ² ≤ τ` of each pixel.
//!
//! Pixel `(u, v)` is addressed by its integer coordinates; a primitive whose
//! projected center is `(x, y)` reaches it when `(x-u)² + (y-v)² ≤ τ`. The
//! image is cut into 16×16 tiles; primitives are binned into every tile
//! whose rectangle lies within `⌈√τ⌉` px of their center, keeping depth
//! order inside each bin, and tiles are filled independently.

use rayon::prelude::*;

use crate::mask::{InstanceMask, RgbFrame};
use crate::scene::{CameraView, GaussianScene};

pub const TILE_SIZE: u32 = 16;
pub const NEAR_PLANE: f64 = 0.01;
pub const DEFAULT_RHO2_THRESHOLD: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectedPrimitive {
    pub center_px: [f64; 2],
    pub depth: f64,
    pub label: u32,
    pub source_index: usize,
}

fn project_filtered(
    scene: &GaussianScene,
    view: &CameraView,
    keep: impl Fn(u32) -> bool + Sync,
) -> Vec<ProjectedPrimitive> {
    let r = view.rotation();
    let t = view.translation();
    let (fx, fy) = (view.focal_x, view.focal_y);
    let (cx, cy) = (view.principal_point.x, view.principal_point.y);
    let mut out: Vec<ProjectedPrimitive> = scene
        .primitives
        .par_iter()
        .enumerate()
        .filter_map(|(i, g)| {
            if !keep(g.instance_label) {
                return None;
            }
            let c = r * g.position_f64() + t;
            if !(c.z > NEAR_PLANE) {
                return None;
            }
            Some(ProjectedPrimitive {
                center_px: [fx * c.x / c.z + cx, fy * c.y / c.z + cy],
                depth: c.z,
                label: g.instance_label,
                source_index: i,
            })
        })
        .collect();
    out.par_sort_unstable_by(|a, b| a.depth.total_cmp(&b.depth).then(a.source_index.cmp(&b.source_index)));
    out
}

/// Project every primitive in front of the near plane, sorted by depth then
/// scene index.
pub fn project_gaussians(scene: &GaussianScene, view: &CameraView) -> Vec<ProjectedPrimitive> {
    project_filtered(scene, view, |_| true)
}

/// [`project_gaussians`] restricted to primitives with a non-zero label.
pub fn project_labeled(scene: &GaussianScene, view: &CameraView) -> Vec<ProjectedPrimitive> {
    project_filtered(scene, view, |l| l > 0)
}

/// Inclusive pixel range `[lo, hi]` along one axis that a center at `c` can
/// reach with margin `m`, clipped to `[0, size)`.
fn footprint(c: f64, m: f64, size: u32) -> Option<(u32, u32)> {
    let lo = (c - m).ceil();
    let hi = (c + m).floor();
    if !(hi >= 0.0 && lo <= (size - 1) as f64) {
        return None;
    }
    Some((lo.max(0.0) as u32, hi.min((size - 1) as f64) as u32))
}

/// Primitives per binning chunk; chunks are binned in parallel.
const BIN_CHUNK: usize = 1 << 16;

/// Tile bins of one contiguous run of primitives, in CSR form.
struct ChunkBins {
    offsets: Vec<u32>,
    items: Vec<u32>,
}

impl ChunkBins {
    fn tile(&self, t: usize) -> &[u32] {
        &self.items[self.offsets[t] as usize..self.offsets[t + 1] as usize]
    }
}

/// For each pixel, `1 + k` where `k` is the first entry of `centers` (in
/// slice order) with `ρ² ≤ τ`, or 0 when none reaches it.
pub fn rasterize_first_hit(centers: &[[f64; 2]], width: u32, height: u32, tau: f64) -> Vec<u32> {
    let mut winners = vec![0u32; width as usize * height as usize];
    if centers.is_empty() || !(tau >= 0.0) || width == 0 || height == 0 {
        return winners;
    }
    let margin = tau.sqrt().ceil();
    let tiles_x = width.div_ceil(TILE_SIZE);
    let tiles_y = height.div_ceil(TILE_SIZE);
    let n_tiles = (tiles_x * tiles_y) as usize;

    // clipped pixel footprint [x0, x1, y0, y1] of every center
    let spans: Vec<Option<[u32; 4]>> = centers
        .par_iter()
        .map(|c| {
            let (x0, x1) = footprint(c[0], margin, width)?;
            let (y0, y1) = footprint(c[1], margin, height)?;
            Some([x0, x1, y0, y1])
        })
        .collect();

    // counting-sort binning per chunk; chunks are consumed in order, so
    // every tile sees its primitives in slice order
    let chunks: Vec<ChunkBins> = spans
        .par_chunks(BIN_CHUNK)
        .enumerate()
        .map(|(ci, spans)| {
            let base = (ci * BIN_CHUNK) as u32;
            let mut offsets = vec![0u32; n_tiles + 1];
            for s in spans.iter().flatten() {
                for ty in s[2] / TILE_SIZE..=s[3] / TILE_SIZE {
                    for tx in s[0] / TILE_SIZE..=s[1] / TILE_SIZE {
                        offsets[(ty * tiles_x + tx) as usize + 1] += 1;
                    }
                }
            }
            for i in 0..n_tiles {
                offsets[i + 1] += offsets[i];
            }
            let mut cursor = offsets.clone();
            let mut items = vec![0u32; offsets[n_tiles] as usize];
            for (j, s) in spans.iter().enumerate() {
                let Some(s) = s else { continue };
                for ty in s[2] / TILE_SIZE..=s[3] / TILE_SIZE {
                    for tx in s[0] / TILE_SIZE..=s[1] / TILE_SIZE {
                        let t = (ty * tiles_x + tx) as usize;
                        items[cursor[t] as usize] = base + j as u32;
                        cursor[t] += 1;
                    }
                }
            }
            ChunkBins { offsets, items }
        })
        .collect();

    let tiles: Vec<(usize, Vec<u32>)> = (0..n_tiles)
        .into_par_iter()
        .filter(|&t| chunks.iter().any(|c| !c.tile(t).is_empty()))
        .map(|t| {
            let tx = t as u32 % tiles_x;
            let ty = t as u32 / tiles_x;
            let (ux0, vy0) = (tx * TILE_SIZE, ty * TILE_SIZE);
            let tw = TILE_SIZE.min(width - ux0);
            let th = TILE_SIZE.min(height - vy0);
            let mut local = vec![0u32; (tw * th) as usize];
            // one bit per claimed pixel, one word per tile row
            let mut claimed = [0u32; TILE_SIZE as usize];
            let full_row = (1u32 << tw) - 1;
            let mut full_rows = 0;
            'tile: for &k in chunks.iter().flat_map(|c| c.tile(t)) {
                let s = spans[k as usize].expect("binned primitives have a footprint");
                let c = centers[k as usize];
                let (x0, x1) = (s[0].max(ux0) - ux0, s[1].min(ux0 + tw - 1) - ux0);
                let (y0, y1) = (s[2].max(vy0) - vy0, s[3].min(vy0 + th - 1) - vy0);
                let bits = ((1u32 << (x1 + 1)) - 1) & !((1u32 << x0) - 1);
                for r in y0..=y1 {
                    let row = &mut claimed[r as usize];
                    if *row & bits == bits {
                        continue;
                    }
                    let dy = c[1] - (vy0 + r) as f64;
                    for x in x0..=x1 {
                        if *row >> x & 1 == 1 {
                            continue;
                        }
                        let dx = c[0] - (ux0 + x) as f64;
                        if dx * dx + dy * dy <= tau {
                            local[(r * tw + x) as usize] = k + 1;
                            *row |= 1 << x;
                            if *row == full_row {
                                full_rows += 1;
                                if full_rows == th {
                                    break 'tile;
                                }
                            }
                        }
                    }
                }
            }
            (t, local)
        })
        .collect();

    for (t, local) in tiles {
        let ux0 = (t as u32 % tiles_x) * TILE_SIZE;
        let vy0 = (t as u32 / tiles_x) * TILE_SIZE;
        let tw = TILE_SIZE.min(width - ux0) as usize;
        for (r, row) in local.chunks_exact(tw).enumerate() {
            let start = (vy0 as usize + r) * width as usize + ux0 as usize;
            winners[start..start + tw].copy_from_slice(row);
        }
    }
    winners
}

/// First-hit label projection over depth-sorted primitives; entries with label
/// 0 never claim a pixel.
pub fn render_instance_mask(projected: &[ProjectedPrimitive], view: &CameraView, tau: f64) -> InstanceMask {
    let labeled: Vec<&ProjectedPrimitive> = projected.iter().filter(|p| p.label > 0).collect();
    let centers: Vec<[f64; 2]> = labeled.iter().map(|p| p.center_px).collect();
    let winners = rasterize_first_hit(&centers, view.width, view.height, tau);
    let labels = winners
        .into_iter()
        .map(|w| if w == 0 { 0 } else { labeled[w as usize - 1].label })
        .collect();
    InstanceMask::from_labels(view.width, view.height, labels).expect("rasterizer output sized to view")
}

/// Project the current scene labels into `view`.
pub fn render_scene_mask(scene: &GaussianScene, view: &CameraView, tau: f64) -> InstanceMask {
    render_instance_mask(&project_labeled(scene, view), view, tau)
}

fn to_u8(c: f32) -> u8 {
    (c.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Flat-color preview: each pixel takes the base color of the first
/// primitive within `ρ² ≤ τ`, black elsewhere.
pub fn render_preview(scene: &GaussianScene, view: &CameraView, tau: f64) -> RgbFrame {
    let projected = project_gaussians(scene, view);
    let centers: Vec<[f64; 2]> = projected.iter().map(|p| p.center_px).collect();
    let winners = rasterize_first_hit(&centers, view.width, view.height, tau);
    let pixels = winners
        .into_iter()
        .map(|w| {
            if w == 0 {
                [0; 3]
            } else {
                scene.primitives[projected[w as usize - 1].source_index].color.map(to_u8)
            }
        })
        .collect();
    RgbFrame {
        width: view.width,
        height: view.height,
        pixels,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::GaussianPrimitive;
    use nalgebra::{Matrix4, Vector3};
    use proptest::prelude::*;

    fn view(w: u32, h: u32) -> CameraView {
        CameraView::new("v", w, h, (100.0, 100.0), (w as f64 / 2.0, h as f64 / 2.0), Matrix4::identity()).unwrap()
    }

    fn prim(center: [f64; 2], depth: f64, label: u32, i: usize) -> ProjectedPrimitive {
        ProjectedPrimitive {
            center_px: center,
            depth,
            label,
            source_index: i,
        }
    }

    fn brute_force(projected: &[ProjectedPrimitive], w: u32, h: u32, tau: f64) -> Vec<u32> {
        let mut out = vec![0; (w * h) as usize];
        for v in 0..h {
            for u in 0..w {
                for p in projected {
                    let dx = p.center_px[0] - u as f64;
                    let dy = p.center_px[1] - v as f64;
                    if p.label > 0 && dx * dx + dy * dy <= tau {
                        out[(v * w + u) as usize] = p.label;
                        break;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn on_axis_projects_to_principal_point() {
        let scene = GaussianScene::new(vec![
            GaussianPrimitive::new(Vector3::new(0.0, 0.0, 4.0), Vector3::repeat(0.1), 1.0, [1.0, 0.0, 0.0]),
            GaussianPrimitive::new(Vector3::new(0.0, 0.0, -1.0), Vector3::repeat(0.1), 1.0, [1.0, 0.0, 0.0]),
        ]);
        let p = project_gaussians(&scene, &view(64, 48));
        assert_eq!(p.len(), 1);
        assert_eq!(p[0].center_px, [32.0, 24.0]);
        assert_eq!(p[0].depth, 4.0);
    }

    #[test]
    fn depth_sorted_with_index_ties() {
        let mk = |z: f32| GaussianPrimitive::new(Vector3::new(0.0, 0.0, z), Vector3::repeat(0.1), 1.0, [0.0; 3]);
        let scene = GaussianScene::new(vec![mk(3.0), mk(1.0), mk(3.0), mk(0.005)]);
        let order: Vec<usize> = project_gaussians(&scene, &view(8, 8)).iter().map(|p| p.source_index).collect();
        assert_eq!(order, vec![1, 0, 2]);
    }

    #[test]
    fn threshold_boundary() {
        let v = view(32, 32);
        let m = render_instance_mask(&[prim([10.0, 10.0], 1.0, 5, 0)], &v, 4.0);
        assert_eq!(m.get(10, 10), 5);
        assert_eq!(m.get(12, 10), 5, "rho2 = 4 is inside");
        assert_eq!(m.get(13, 10), 0);
        let m = render_instance_mask(&[prim([12.1, 10.0], 1.0, 5, 0)], &v, 4.0);
        assert_eq!(m.get(10, 10), 0, "rho2 = 4.41 is outside");
    }

    #[test]
    fn nearer_label_wins() {
        let v = view(32, 32);
        let m = render_instance_mask(&[prim([10.0, 10.0], 1.0, 1, 0), prim([11.0, 10.0], 2.0, 2, 1)], &v, 4.0);
        assert_eq!(m.get(10, 10), 1);
        assert_eq!(m.get(12, 10), 1);
        assert_eq!(m.get(13, 10), 2);
    }

    #[test]
    fn unlabeled_primitives_never_occlude() {
        let v = view(32, 32);
        let m = render_instance_mask(&[prim([10.0, 10.0], 1.0, 0, 0), prim([10.0, 10.0], 2.0, 3, 1)], &v, 4.0);
        assert_eq!(m.get(10, 10), 3);
    }

    #[test]
    fn off_image_centers_stamp_border() {
        let v = view(20, 20);
        let m = render_instance_mask(&[prim([-1.5, 5.0], 1.0, 4, 0)], &v, 4.0);
        assert_eq!(m.get(0, 5), 4);
        assert_eq!(m.count(4), 3);
    }

    #[test]
    fn preview_disk_and_black_background() {
        let scene = GaussianScene::new(vec![GaussianPrimitive::new(
            Vector3::new(0.0, 0.0, 2.0),
            Vector3::repeat(0.1),
            1.0,
            [1.0, 0.0, 0.0],
        )]);
        let v = view(40, 40);
        let img = render_preview(&scene, &v, 4.0);
        let red = img.pixels.iter().filter(|p| **p == [255, 0, 0]).count();
        assert_eq!(red, 13, "integer points with x² + y² ≤ 4");
        assert_eq!(img.pixels[0], [0, 0, 0]);
        let empty = render_preview(&GaussianScene::new(vec![]), &v, 4.0);
        assert!(empty.pixels.iter().all(|p| *p == [0; 3]));
    }

    proptest! {
        #[test]
        fn tiled_equals_brute_force(
            prims in prop::collection::vec((-6.0f64..46.0, -6.0f64..38.0, 0.0f64..1.0, 0u32..4), 0..120),
            tau in prop_oneof![Just(4.0), 0.0f64..12.0],
        ) {
            let mut projected: Vec<ProjectedPrimitive> = prims
                .iter()
                .enumerate()
                .map(|(i, &(x, y, d, l))| prim([x, y], d, l, i))
                .collect();
            projected.sort_by(|a, b| a.depth.total_cmp(&b.depth).then(a.source_index.cmp(&b.source_index)));
            let v = view(40, 33);
            let m = render_instance_mask(&projected, &v, tau);
            prop_assert_eq!(m.labels, brute_force(&projected, 40, 33, tau));
        }
    }
}
