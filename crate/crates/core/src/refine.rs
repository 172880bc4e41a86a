//! Mask post-processing: multi-scale closing, edge-aware hole filling and
//! largest-component selection, applied per instance.

use std::collections::VecDeque;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::mask::InstanceMask;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefineParams {
    pub large_close_radius: u32,
    pub large_close_iters: u32,
    pub small_close_radius: u32,
    pub small_close_iters: u32,
    pub edge_margin: u32,
}

impl Default for RefineParams {
    fn default() -> Self {
        Self {
            large_close_radius: 5,
            large_close_iters: 10,
            small_close_radius: 1,
            small_close_iters: 1,
            edge_margin: 7,
        }
    }
}

impl RefineParams {
    pub fn validate(&self) -> Result<(), String> {
        if self.large_close_radius == 0 || self.small_close_radius == 0 {
            return Err("closing radii must be ≥ 1".into());
        }
        if self.large_close_iters == 0 || self.small_close_iters == 0 {
            return Err("closing iterations must be ≥ 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    pub width: u32,
    pub height: u32,
    pub data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            data: vec![false; width as usize * height as usize],
        }
    }

    pub fn from_instance(mask: &InstanceMask, id: u32) -> Self {
        Self {
            width: mask.width,
            height: mask.height,
            data: mask.labels.iter().map(|&l| l == id).collect(),
        }
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        self.data[y as usize * self.width as usize + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, value: bool) {
        self.data[y as usize * self.width as usize + x as usize] = value;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&b| b)
    }

    /// Inclusive bounding box `(x0, y0, x1, y1)` of the set pixels.
    pub fn bbox(&self) -> Option<(u32, u32, u32, u32)> {
        let w = self.width as usize;
        let mut bb: Option<(u32, u32, u32, u32)> = None;
        for (i, _) in self.data.iter().enumerate().filter(|(_, &b)| b) {
            let (x, y) = ((i % w) as u32, (i / w) as u32);
            bb = Some(match bb {
                None => (x, y, x, y),
                Some((x0, y0, x1, y1)) => (x0.min(x), y0.min(y), x1.max(x), y1.max(y)),
            });
        }
        bb
    }
}

/// Half-widths of the discrete disk of radius `r`, indexed by `dy + r`.
/// Offsets with `dx² + dy² ≤ r² + r` (distance below `r + ½`) belong to it,
/// so radius 1 is the full 3×3 square.
fn disk_rows(r: u32) -> Vec<i64> {
    let r = r as i64;
    (-r..=r)
        .map(|dy| {
            let mut hw = 0;
            while (hw + 1) * (hw + 1) + dy * dy <= r * r + r {
                hw += 1;
            }
            hw
        })
        .collect()
}

fn row_prefix(src: &[bool], w: usize, h: usize) -> Vec<u32> {
    let mut pre = vec![0u32; (w + 1) * h];
    for y in 0..h {
        let (row, out) = (&src[y * w..(y + 1) * w], &mut pre[y * (w + 1)..(y + 1) * (w + 1)]);
        for x in 0..w {
            out[x + 1] = out[x] + row[x] as u32;
        }
    }
    pre
}

/// Dilation (`erode == false`) or erosion with the disk decomposed into
/// horizontal runs; everything outside the `w × h` buffer is background.
fn disk_pass(src: &[bool], w: usize, h: usize, rows: &[i64], erode: bool) -> Vec<bool> {
    let pre = row_prefix(src, w, h);
    let r = (rows.len() / 2) as i64;
    let mut out = vec![false; w * h];
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let mut hit = erode;
            for (k, &hw) in rows.iter().enumerate() {
                let yy = y + k as i64 - r;
                let (lo, hi) = (x - hw, x + hw);
                if erode {
                    if yy < 0 || yy >= h as i64 || lo < 0 || hi >= w as i64 {
                        hit = false;
                        break;
                    }
                    let base = yy as usize * (w + 1);
                    if pre[base + hi as usize + 1] - pre[base + lo as usize] != (hi - lo + 1) as u32 {
                        hit = false;
                        break;
                    }
                } else {
                    if yy < 0 || yy >= h as i64 {
                        continue;
                    }
                    let (lo, hi) = (lo.max(0) as usize, hi.min(w as i64 - 1) as usize);
                    let base = yy as usize * (w + 1);
                    if pre[base + hi + 1] > pre[base + lo] {
                        hit = true;
                        break;
                    }
                }
            }
            out[y as usize * w + x as usize] = hit;
        }
    }
    out
}

/// `iterations` rounds of dilation followed by erosion with a disk of
/// `radius`. Pixels beyond the image count as background in both passes.
///
/// The closing of a set never leaves its bounding box, so the work is done
/// on the box grown by `radius + 1` and pasted back.
pub fn morphological_close(mask: &BinaryMask, radius: u32, iterations: u32) -> BinaryMask {
    let Some((x0, y0, x1, y1)) = mask.bbox() else {
        return mask.clone();
    };
    let pad = radius + 1;
    let (wx0, wy0) = (x0.saturating_sub(pad), y0.saturating_sub(pad));
    let (wx1, wy1) = ((x1 + pad).min(mask.width - 1), (y1 + pad).min(mask.height - 1));
    let (ww, wh) = ((wx1 - wx0 + 1) as usize, (wy1 - wy0 + 1) as usize);
    let mut win = vec![false; ww * wh];
    for y in 0..wh {
        for x in 0..ww {
            win[y * ww + x] = mask.get(wx0 + x as u32, wy0 + y as u32);
        }
    }
    let rows = disk_rows(radius);
    for _ in 0..iterations {
        let dilated = disk_pass(&win, ww, wh, &rows, false);
        win = disk_pass(&dilated, ww, wh, &rows, true);
    }
    let mut out = BinaryMask::new(mask.width, mask.height);
    for y in 0..wh {
        for x in 0..ww {
            if win[y * ww + x] {
                out.set(wx0 + x as u32, wy0 + y as u32, true);
            }
        }
    }
    out
}

/// Erosion with the disk of `radius` over the whole image.
pub fn erode(mask: &BinaryMask, radius: u32) -> BinaryMask {
    let data = disk_pass(&mask.data, mask.width as usize, mask.height as usize, &disk_rows(radius), true);
    BinaryMask {
        width: mask.width,
        height: mask.height,
        data,
    }
}

fn in_band(x: u32, y: u32, w: u32, h: u32, margin: u32) -> bool {
    x < margin || y < margin || x + margin >= w || y + margin >= h
}

/// Fill background regions that the border flood (4-connected) cannot
/// reach, except those with a pixel inside the `edge_margin` band.
pub fn fill_holes(mask: &BinaryMask, edge_margin: u32) -> BinaryMask {
    let (w, h) = (mask.width, mask.height);
    let (wu, hu) = (w as usize, h as usize);
    let mut out = mask.clone();
    if wu == 0 || hu == 0 {
        return out;
    }
    // 0 = unvisited background, 1 = reached from the border, 2 = examined hole
    let mut state = vec![0u8; wu * hu];
    let mut queue = VecDeque::new();
    for y in 0..hu {
        for x in 0..wu {
            if (x == 0 || y == 0 || x == wu - 1 || y == hu - 1) && !mask.data[y * wu + x] {
                state[y * wu + x] = 1;
                queue.push_back(y * wu + x);
            }
        }
    }
    let neighbours = |i: usize| {
        let (x, y) = (i % wu, i / wu);
        [
            (x > 0).then(|| i - 1),
            (x + 1 < wu).then(|| i + 1),
            (y > 0).then(|| i - wu),
            (y + 1 < hu).then(|| i + wu),
        ]
    };
    while let Some(i) = queue.pop_front() {
        for j in neighbours(i).into_iter().flatten() {
            if state[j] == 0 && !mask.data[j] {
                state[j] = 1;
                queue.push_back(j);
            }
        }
    }
    for start in 0..wu * hu {
        if mask.data[start] || state[start] != 0 {
            continue;
        }
        let mut region = vec![start];
        state[start] = 2;
        let mut k = 0;
        while k < region.len() {
            let i = region[k];
            k += 1;
            for j in neighbours(i).into_iter().flatten() {
                if state[j] == 0 && !mask.data[j] {
                    state[j] = 2;
                    region.push(j);
                }
            }
        }
        let near_edge = region
            .iter()
            .any(|&i| in_band((i % wu) as u32, (i / wu) as u32, w, h, edge_margin));
        if !near_edge {
            for i in region {
                out.data[i] = true;
            }
        }
    }
    out
}

struct UnionFind {
    parent: Vec<u32>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n as u32).collect(),
        }
    }

    fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let p = self.parent[x as usize];
            self.parent[x as usize] = self.parent[p as usize];
            x = p;
        }
        x
    }

    /// Union keeping the smaller index as root, so every root is the
    /// component's first pixel in row-major order.
    fn union(&mut self, a: u32, b: u32) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi as usize] = lo;
        }
    }
}

/// 8-connected component roots (first pixel index) for every set pixel,
/// `u32::MAX` for background.
fn component_roots(data: &[bool], w: usize, h: usize) -> Vec<u32> {
    let mut uf = UnionFind::new(w * h);
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if !data[i] {
                continue;
            }
            // already-visited neighbours: W, NW, N, NE
            if x > 0 && data[i - 1] {
                uf.union(i as u32, (i - 1) as u32);
            }
            if y > 0 {
                let up = i - w;
                if data[up] {
                    uf.union(i as u32, up as u32);
                }
                if x > 0 && data[up - 1] {
                    uf.union(i as u32, (up - 1) as u32);
                }
                if x + 1 < w && data[up + 1] {
                    uf.union(i as u32, (up + 1) as u32);
                }
            }
        }
    }
    (0..w * h)
        .map(|i| if data[i] { uf.find(i as u32) } else { u32::MAX })
        .collect()
}

/// Keep only the largest 8-connected component; ties go to the component
/// whose first pixel comes first in row-major order.
pub fn largest_component(mask: &BinaryMask) -> BinaryMask {
    let (w, h) = (mask.width as usize, mask.height as usize);
    let roots = component_roots(&mask.data, w, h);
    let mut sizes = vec![0u32; w * h];
    for &r in &roots {
        if r != u32::MAX {
            sizes[r as usize] += 1;
        }
    }
    // strict > while scanning ascending roots keeps the earliest on ties
    let mut best: Option<(u32, u32)> = None;
    for (root, &size) in sizes.iter().enumerate() {
        if size > 0 && best.is_none_or(|(_, s)| size > s) {
            best = Some((root as u32, size));
        }
    }
    let mut out = BinaryMask::new(mask.width, mask.height);
    if let Some((root, _)) = best {
        for (o, &r) in out.data.iter_mut().zip(&roots) {
            *o = r == root;
        }
    }
    out
}

/// The per-instance pipeline on one binary mask.
pub fn refine_binary(mask: &BinaryMask, params: &RefineParams) -> BinaryMask {
    let b = morphological_close(mask, params.large_close_radius, params.large_close_iters);
    let b = fill_holes(&b, params.edge_margin);
    let b = morphological_close(&b, params.small_close_radius, params.small_close_iters);
    let b = fill_holes(&b, params.edge_margin);
    largest_component(&b)
}

const CONSOLIDATION_ROUNDS: usize = 32;

/// Refine every instance independently, write them back in ascending id
/// order (a later id overwrites an earlier one), then consolidate so each
/// surviving instance is a single 8-connected region without enclosed
/// background off the edge band.
pub fn refine_mask(mask: &InstanceMask, params: &RefineParams) -> InstanceMask {
    let ids = mask.instance_ids();
    let refined: Vec<(u32, BinaryMask)> = ids
        .par_iter()
        .map(|&id| (id, refine_binary(&BinaryMask::from_instance(mask, id), params)))
        .collect();
    let mut out = InstanceMask::new(mask.width, mask.height);
    for (id, b) in &refined {
        for (o, &set) in out.labels.iter_mut().zip(&b.data) {
            if set {
                *o = *id;
            }
        }
    }
    for _ in 0..CONSOLIDATION_ROUNDS {
        let merged = merge_fragments(&mut out);
        let absorbed = absorb_enclosed_background(&mut out, params.edge_margin);
        if !merged && !absorbed {
            break;
        }
    }
    out
}

/// Neighbour with the most contacts, ties to the smaller id.
fn dominant(contacts: &std::collections::BTreeMap<u32, usize>) -> Option<u32> {
    let mut best: Option<(u32, usize)> = None;
    for (&id, &n) in contacts {
        if best.is_none_or(|(_, b)| n > b) {
            best = Some((id, n));
        }
    }
    best.map(|(id, _)| id)
}

/// Every non-largest 8-connected fragment of an instance is handed to the
/// adjacent instance it touches most, or cleared if it touches none.
fn merge_fragments(mask: &mut InstanceMask) -> bool {
    let (w, h) = (mask.width as usize, mask.height as usize);
    let mut changed = false;
    for id in mask.instance_ids() {
        let data: Vec<bool> = mask.labels.iter().map(|&l| l == id).collect();
        let roots = component_roots(&data, w, h);
        let mut sizes = std::collections::BTreeMap::<u32, u32>::new();
        for &r in roots.iter().filter(|&&r| r != u32::MAX) {
            *sizes.entry(r).or_default() += 1;
        }
        if sizes.len() <= 1 {
            continue;
        }
        let mut keep = (u32::MAX, 0);
        for (&r, &s) in &sizes {
            if s > keep.1 {
                keep = (r, s);
            }
        }
        for (&root, _) in sizes.iter().filter(|(&r, _)| r != keep.0) {
            let pixels: Vec<usize> = (0..w * h).filter(|&i| roots[i] == root).collect();
            let mut contacts = std::collections::BTreeMap::new();
            for &i in &pixels {
                let (x, y) = ((i % w) as i64, (i / w) as i64);
                for dy in -1..=1 {
                    for dx in -1..=1 {
                        let (nx, ny) = (x + dx, y + dy);
                        if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                            continue;
                        }
                        let l = mask.labels[ny as usize * w + nx as usize];
                        if l != 0 && l != id {
                            *contacts.entry(l).or_insert(0usize) += 1;
                        }
                    }
                }
            }
            let target = dominant(&contacts).unwrap_or(0);
            for i in pixels {
                mask.labels[i] = target;
            }
            changed = true;
        }
    }
    changed
}

/// Background regions (4-connected) that neither reach the image border nor
/// enter the edge band go to the instance they touch most.
fn absorb_enclosed_background(mask: &mut InstanceMask, margin: u32) -> bool {
    let (w, h) = (mask.width, mask.height);
    let (wu, hu) = (w as usize, h as usize);
    let mut seen = vec![false; wu * hu];
    let mut changed = false;
    for start in 0..wu * hu {
        if seen[start] || mask.labels[start] != 0 {
            continue;
        }
        seen[start] = true;
        let mut region = vec![start];
        let mut open = false;
        let mut contacts = std::collections::BTreeMap::new();
        let mut k = 0;
        while k < region.len() {
            let i = region[k];
            k += 1;
            let (x, y) = (i % wu, i / wu);
            if in_band(x as u32, y as u32, w, h, margin) || x == 0 || y == 0 || x + 1 == wu || y + 1 == hu {
                open = true;
            }
            let nbrs = [
                (x > 0).then(|| i - 1),
                (x + 1 < wu).then(|| i + 1),
                (y > 0).then(|| i - wu),
                (y + 1 < hu).then(|| i + wu),
            ];
            for j in nbrs.into_iter().flatten() {
                let l = mask.labels[j];
                if l == 0 {
                    if !seen[j] {
                        seen[j] = true;
                        region.push(j);
                    }
                } else {
                    *contacts.entry(l).or_insert(0usize) += 1;
                }
            }
        }
        if open {
            continue;
        }
        if let Some(target) = dominant(&contacts) {
            for i in region {
                mask.labels[i] = target;
            }
            changed = true;
        }
    }
    changed
}
