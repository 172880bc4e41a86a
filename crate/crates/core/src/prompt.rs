//! Click prompts: ray casting, opacity-accumulated surface anchoring and the
//! Gaussian relevance weight map handed to the decoder.

use nalgebra::Vector3;

use crate::scene::{CameraView, GaussianScene};

/// Default opacity that the front-to-back accumulation must exceed.
pub const DEFAULT_OPACITY_THRESHOLD: f64 = 0.9;
/// Default spatial sensitivity of the weight kernel, meters.
pub const DEFAULT_SIGMA_M: f64 = 0.15;
/// Added to every covariance before inversion.
pub const COVARIANCE_REGULARIZATION: f64 = 1e-8;
/// Gaussians whose closest-approach exponent exceeds this contribute less
/// than `e^-40` and are skipped.
const NEGLIGIBLE_EXPONENT: f64 = 40.0;

/// Width of an augmented point record: x, y, z, r, g, b, weight.
pub const FEATURE_WIDTH: usize = 7;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PromptError {
    #[error("pixel ({u}, {v}) outside the {width}x{height} view")]
    OutOfBounds { u: f64, v: f64, width: u32, height: u32 },
    #[error("ray accumulated opacity {accumulated:.4} never exceeded {threshold} (empty-space click)")]
    NoHit { accumulated: f64, threshold: f64 },
    #[error("scene is empty")]
    EmptyScene,
    #[error("weight map has {got} entries for {expected} primitives")]
    Alignment { expected: usize, got: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClickPrompt {
    /// Continuous pixel coordinates; integer values address pixel centers.
    pub u: f64,
    pub v: f64,
    pub view_id: String,
    pub instance_id: u32,
}

impl ClickPrompt {
    pub fn new(view_id: impl Into<String>, u: f64, v: f64, instance_id: u32) -> Self {
        Self {
            u,
            v,
            view_id: view_id.into(),
            instance_id,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vector3<f64>,
    pub direction: Vector3<f64>,
}

impl Ray {
    pub fn at(&self, t: f64) -> Vector3<f64> {
        self.origin + self.direction * t
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnchorPoint {
    pub position: Vector3<f64>,
    pub ray: Ray,
    pub depth: f64,
}

/// Per-primitive relevance weights, aligned with scene order.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMap {
    pub weights: Vec<f64>,
}

impl WeightMap {
    /// Element-wise maximum, used to merge several clicks on one instance.
    pub fn merge_max(&mut self, other: &WeightMap) -> Result<(), PromptError> {
        if other.weights.len() != self.weights.len() {
            return Err(PromptError::Alignment {
                expected: self.weights.len(),
                got: other.weights.len(),
            });
        }
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a = a.max(*b);
        }
        Ok(())
    }
}

/// A Gaussian as seen by the decoder: position, base color and click weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentedPoint {
    pub position: [f64; 3],
    pub color: [f64; 3],
    pub weight: f64,
}

impl AugmentedPoint {
    pub fn features(&self) -> [f64; FEATURE_WIDTH] {
        let [x, y, z] = self.position;
        let [r, g, b] = self.color;
        [x, y, z, r, g, b, self.weight]
    }
}

/// Ray through pixel `(u, v)` under the pinhole model.
pub fn cast_ray(view: &CameraView, u: f64, v: f64) -> Result<Ray, PromptError> {
    if !view.contains_pixel(u, v) {
        return Err(PromptError::OutOfBounds {
            u,
            v,
            width: view.width,
            height: view.height,
        });
    }
    let cam_dir = Vector3::new(
        (u - view.principal_point.x) / view.focal_x,
        (v - view.principal_point.y) / view.focal_y,
        1.0,
    );
    let direction = (view.rotation().transpose() * cam_dir).normalize();
    Ok(Ray {
        origin: view.camera_center(),
        direction,
    })
}

/// Composite Gaussians front-to-back along `ray` and anchor at the first one
/// whose accumulated opacity exceeds `threshold`.
///
/// Each Gaussian is evaluated once, at the ray point closest to its center;
/// compositing order is the depth of that point, ties by primitive index.
pub fn intersect_scene(scene: &GaussianScene, ray: &Ray, threshold: f64) -> Result<AnchorPoint, PromptError> {
    if scene.is_empty() {
        return Err(PromptError::EmptyScene);
    }
    let mut hits: Vec<(f64, usize, f64)> = scene
        .primitives
        .iter()
        .enumerate()
        .filter_map(|(i, g)| {
            if g.opacity <= 0.0 {
                return None;
            }
            let mu = g.position_f64();
            let t = (mu - ray.origin).dot(&ray.direction);
            if t <= 0.0 {
                return None;
            }
            let delta = ray.at(t) - mu;
            let s_max = g.scale.max() as f64;
            let loose = delta.norm_squared() / (s_max * s_max + COVARIANCE_REGULARIZATION);
            if 0.5 * loose > NEGLIGIBLE_EXPONENT {
                return None;
            }
            let alpha = g.opacity as f64 * (-0.5 * g.mahalanobis_sq(&delta, COVARIANCE_REGULARIZATION)).exp();
            (alpha > 0.0).then_some((t, i, alpha))
        })
        .collect();
    hits.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    let mut accumulated = 0.0;
    let mut transmittance = 1.0;
    for (t, _, alpha) in hits {
        accumulated += alpha * transmittance;
        transmittance *= 1.0 - alpha;
        if accumulated > threshold {
            return Ok(AnchorPoint {
                position: ray.at(t),
                ray: *ray,
                depth: t,
            });
        }
    }
    Err(PromptError::NoHit {
        accumulated,
        threshold,
    })
}

/// `w_i = exp(-‖μ_i − p‖² / 2σ²)` with distances in meters. Weights are
/// clamped below at the smallest normal `f64` so they stay positive.
pub fn compute_weights(scene: &GaussianScene, anchor: &Vector3<f64>, sigma_m: f64) -> Result<WeightMap, PromptError> {
    if !(sigma_m > 0.0) {
        return Err(PromptError::InvalidParameter(format!("sigma {sigma_m} must be positive")));
    }
    let denom = 2.0 * sigma_m * sigma_m;
    let s2 = scene.unit_scale * scene.unit_scale;
    let weights = scene
        .primitives
        .iter()
        .map(|g| {
            let d2 = (g.position_f64() - anchor).norm_squared() * s2;
            (-d2 / denom).exp().max(f64::MIN_POSITIVE)
        })
        .collect();
    Ok(WeightMap { weights })
}

/// Concatenate the weight channel to each primitive's position and color.
pub fn augment_gaussians(scene: &GaussianScene, weights: &WeightMap) -> Result<Vec<AugmentedPoint>, PromptError> {
    if weights.weights.len() != scene.len() {
        return Err(PromptError::Alignment {
            expected: scene.len(),
            got: weights.weights.len(),
        });
    }
    Ok(scene
        .primitives
        .iter()
        .zip(&weights.weights)
        .map(|(g, &weight)| AugmentedPoint {
            position: [g.position.x as f64, g.position.y as f64, g.position.z as f64],
            color: g.color.map(f64::from),
            weight,
        })
        .collect())
}
