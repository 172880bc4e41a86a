use std::collections::{HashMap, VecDeque};

use nalgebra::Vector3;

use super::{DecoderError, SegmentRequest, SegmentationBackend, SegmentationLogits};

/// Default growth radius, meters.
pub const DEFAULT_GROWTH_RADIUS_M: f64 = 0.03;
/// Points below this click weight may not seed a region.
pub const MIN_SEED_WEIGHT: f64 = 0.01;

const FG: f64 = 0.99;
const BG: f64 = 0.01;

/// Region-growing stand-in for a learned point backbone.
///
/// Seeds are the eligible points nearest each click anchor; the region then
/// absorbs every point within `epsilon_m` of an absorbed point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeometricBackend {
    pub epsilon_m: f64,
}

impl Default for GeometricBackend {
    fn default() -> Self {
        Self {
            epsilon_m: DEFAULT_GROWTH_RADIUS_M,
        }
    }
}

impl GeometricBackend {
    pub fn new(epsilon_m: f64) -> Result<Self, DecoderError> {
        if !(epsilon_m > 0.0) {
            return Err(DecoderError::InvalidParameter(format!("growth radius {epsilon_m} must be positive")));
        }
        Ok(Self { epsilon_m })
    }
}

impl SegmentationBackend for GeometricBackend {
    fn name(&self) -> String {
        format!("baseline(eps={} m)", self.epsilon_m)
    }

    fn segment(&self, request: &SegmentRequest<'_>) -> Result<SegmentationLogits, DecoderError> {
        if request.points.is_empty() {
            return Err(DecoderError::EmptyInput);
        }
        let positions: Vec<Vector3<f64>> = request.points.iter().map(|p| Vector3::from(p.position)).collect();
        let mut seeds: Vec<usize> = request
            .anchors
            .iter()
            .filter_map(|a| {
                positions
                    .iter()
                    .zip(request.points)
                    .enumerate()
                    .filter(|(_, (_, p))| p.weight >= MIN_SEED_WEIGHT)
                    .map(|(i, (x, _))| (i, (x - a).norm_squared()))
                    .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
                    .map(|(i, _)| i)
            })
            .collect();
        seeds.sort_unstable();
        seeds.dedup();
        let eps = self.epsilon_m / request.unit_scale;
        let grown = region_grow(&positions, &seeds, eps);
        Ok(SegmentationLogits {
            fg: grown.iter().map(|&g| if g { FG } else { BG }).collect(),
            bg: grown.iter().map(|&g| if g { BG } else { FG }).collect(),
        })
    }
}

fn cell_of(p: &Vector3<f64>, eps: f64) -> [i64; 3] {
    [
        (p.x / eps).floor() as i64,
        (p.y / eps).floor() as i64,
        (p.z / eps).floor() as i64,
    ]
}

/// Breadth-first growth from `seeds` over a uniform grid of cell size `eps`.
/// A point joins when its squared distance to an absorbed point is `≤ eps²`.
pub fn region_grow(positions: &[Vector3<f64>], seeds: &[usize], eps: f64) -> Vec<bool> {
    let mut grown = vec![false; positions.len()];
    if seeds.is_empty() {
        return grown;
    }
    let mut grid: HashMap<[i64; 3], Vec<u32>> = HashMap::new();
    for (i, p) in positions.iter().enumerate() {
        grid.entry(cell_of(p, eps)).or_default().push(i as u32);
    }
    let eps2 = eps * eps;
    let mut queue = VecDeque::new();
    for &s in seeds {
        if !grown[s] {
            grown[s] = true;
            queue.push_back(s);
        }
    }
    while let Some(i) = queue.pop_front() {
        let p = positions[i];
        let [cx, cy, cz] = cell_of(&p, eps);
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    let Some(cell) = grid.get(&[cx + dx, cy + dy, cz + dz]) else {
                        continue;
                    };
                    for &j in cell {
                        let j = j as usize;
                        if !grown[j] && (positions[j] - p).norm_squared() <= eps2 {
                            grown[j] = true;
                            queue.push_back(j);
                        }
                    }
                }
            }
        }
    }
    grown
}
