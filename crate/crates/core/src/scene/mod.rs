//! Gaussian scenes, camera views and dataset ingestion.

mod colmap;
mod dataset;
mod ply;

use std::path::PathBuf;

use nalgebra::{Matrix3, Matrix4, Point3, UnitQuaternion, Vector2, Vector3};

pub use colmap::{load_colmap_cameras, write_colmap_text};
pub use dataset::{load_dataset_scene, read_class_map, DatasetScene, Frame};
pub use ply::{load_gaussian_ply, save_labeled_ply, PlyFormatHint, LABEL_FIELD};

/// Third-axis extent given to planar (2DGS) primitives.
pub const PLANAR_THIRD_SCALE: f32 = 1e-6;

#[derive(Debug, thiserror::Error)]
pub enum SceneError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: missing required field `{field}`")]
    MissingField { path: PathBuf, field: String },
    #[error("{path}: malformed file: {reason}")]
    Malformed { path: PathBuf, reason: String },
    #[error("{path}: scene has no primitives")]
    EmptyScene { path: PathBuf },
    #[error("unsupported camera model `{model}`")]
    UnsupportedCameraModel { model: String },
    #[error("invalid primitive {index}: {reason}")]
    InvalidPrimitive { index: usize, reason: String },
    #[error("invalid camera `{view_id}`: {reason}")]
    InvalidCamera { view_id: String, reason: String },
    #[error("dataset inconsistent: {0}")]
    Inconsistent(String),
    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

impl SceneError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        SceneError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn malformed(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        SceneError::Malformed {
            path: path.into(),
            reason: reason.into(),
        }
    }
}

/// One anisotropic Gaussian. Covariance is kept factored as scale + rotation.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPrimitive {
    pub position: Vector3<f32>,
    /// Per-axis standard deviations, world units.
    pub scale: Vector3<f32>,
    pub rotation: UnitQuaternion<f32>,
    /// Linear opacity in `[0, 1]`.
    pub opacity: f32,
    /// Base RGB in `[0, 1]` (zeroth SH band).
    pub color: [f32; 3],
    /// Instance id, 0 = background.
    pub instance_label: u32,
}

impl GaussianPrimitive {
    pub fn new(position: Vector3<f32>, scale: Vector3<f32>, opacity: f32, color: [f32; 3]) -> Self {
        Self {
            position,
            scale,
            rotation: UnitQuaternion::identity(),
            opacity,
            color,
            instance_label: 0,
        }
    }

    pub fn position_f64(&self) -> Vector3<f64> {
        self.position.cast()
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.cast::<f64>().to_rotation_matrix().into_inner()
    }

    /// `R · diag(scale²) · Rᵀ`.
    pub fn covariance(&self) -> Matrix3<f64> {
        let r = self.rotation_matrix();
        let s: Vector3<f64> = self.scale.cast();
        r * Matrix3::from_diagonal(&s.component_mul(&s)) * r.transpose()
    }

    /// `Δᵀ (Σ + εI)⁻¹ Δ`, evaluated in the primitive's local frame so no
    /// explicit inverse is formed.
    pub fn mahalanobis_sq(&self, delta: &Vector3<f64>, regularization: f64) -> f64 {
        let local = self.rotation_matrix().transpose() * delta;
        let s: Vector3<f64> = self.scale.cast();
        (0..3)
            .map(|k| local[k] * local[k] / (s[k] * s[k] + regularization))
            .sum()
    }

    pub fn validate(&self, index: usize) -> Result<(), SceneError> {
        let bad = |reason: String| Err(SceneError::InvalidPrimitive { index, reason });
        if !(0.0..=1.0).contains(&self.opacity) {
            return bad(format!("opacity {} outside [0,1]", self.opacity));
        }
        if self.scale.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return bad(format!("non-positive scale {:?}", self.scale));
        }
        if self.position.iter().any(|p| !p.is_finite()) {
            return bad("non-finite position".into());
        }
        let norm = self.rotation.quaternion().norm();
        if (norm - 1.0).abs() > 1e-6 {
            return bad(format!("rotation norm {norm}"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianScene {
    pub primitives: Vec<GaussianPrimitive>,
    /// Meters per world unit.
    pub unit_scale: f64,
    pub source_path: String,
}

impl GaussianScene {
    pub fn new(primitives: Vec<GaussianPrimitive>) -> Self {
        Self {
            primitives,
            unit_scale: 1.0,
            source_path: String::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.primitives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.primitives.is_empty()
    }

    pub fn labels(&self) -> Vec<u32> {
        self.primitives.iter().map(|p| p.instance_label).collect()
    }

    pub fn set_labels(&mut self, labels: &[u32]) {
        assert_eq!(labels.len(), self.primitives.len());
        for (p, &l) in self.primitives.iter_mut().zip(labels) {
            p.instance_label = l;
        }
    }

    pub fn clear_labels(&mut self) {
        for p in &mut self.primitives {
            p.instance_label = 0;
        }
    }

    pub fn max_label(&self) -> u32 {
        self.primitives
            .iter()
            .map(|p| p.instance_label)
            .max()
            .unwrap_or(0)
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        if !(self.unit_scale > 0.0) {
            return Err(SceneError::malformed(
                &self.source_path,
                format!("unit_scale {} must be positive", self.unit_scale),
            ));
        }
        for (i, p) in self.primitives.iter().enumerate() {
            p.validate(i)?;
        }
        Ok(())
    }
}

/// Pinhole camera with a rigid world-to-camera transform (OpenCV axes:
/// +z forward, +y down).
#[derive(Debug, Clone, PartialEq)]
pub struct CameraView {
    pub width: u32,
    pub height: u32,
    pub focal_x: f64,
    pub focal_y: f64,
    pub principal_point: Vector2<f64>,
    pub world_to_camera: Matrix4<f64>,
    pub view_id: String,
}

impl CameraView {
    pub fn new(
        view_id: impl Into<String>,
        width: u32,
        height: u32,
        focal: (f64, f64),
        principal_point: (f64, f64),
        world_to_camera: Matrix4<f64>,
    ) -> Result<Self, SceneError> {
        let view = Self {
            width,
            height,
            focal_x: focal.0,
            focal_y: focal.1,
            principal_point: Vector2::new(principal_point.0, principal_point.1),
            world_to_camera,
            view_id: view_id.into(),
        };
        view.validate()?;
        Ok(view)
    }

    /// Camera at `eye` looking at `target`, with `up` pointing up in the image.
    pub fn look_at(
        view_id: impl Into<String>,
        width: u32,
        height: u32,
        focal: f64,
        eye: Vector3<f64>,
        target: Vector3<f64>,
        up: Vector3<f64>,
    ) -> Result<Self, SceneError> {
        let forward = (target - eye).normalize();
        let right = forward.cross(&up).normalize();
        let down = forward.cross(&right);
        let r = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let t = -(r * eye);
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&t);
        Self::new(
            view_id,
            width,
            height,
            (focal, focal),
            (width as f64 / 2.0, height as f64 / 2.0),
            m,
        )
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        self.world_to_camera.fixed_view::<3, 3>(0, 0).into_owned()
    }

    pub fn translation(&self) -> Vector3<f64> {
        self.world_to_camera.fixed_view::<3, 1>(0, 3).into_owned()
    }

    /// Camera center in world coordinates, `-Rᵀt`.
    pub fn camera_center(&self) -> Vector3<f64> {
        -(self.rotation().transpose() * self.translation())
    }

    pub fn world_to_camera_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.world_to_camera
            .transform_point(&Point3::from(*p))
            .coords
    }

    /// Pixel coordinates and camera depth of a world point; `None` behind the
    /// camera.
    pub fn project(&self, p: &Vector3<f64>) -> Option<(f64, f64, f64)> {
        let c = self.world_to_camera_point(p);
        if c.z <= 0.0 {
            return None;
        }
        Some((
            self.focal_x * c.x / c.z + self.principal_point.x,
            self.focal_y * c.y / c.z + self.principal_point.y,
            c.z,
        ))
    }

    pub fn contains_pixel(&self, u: f64, v: f64) -> bool {
        u >= 0.0 && v >= 0.0 && u < self.width as f64 && v < self.height as f64
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        let bad = |reason: String| {
            Err(SceneError::InvalidCamera {
                view_id: self.view_id.clone(),
                reason,
            })
        };
        if self.width == 0 || self.height == 0 {
            return bad(format!("degenerate size {}x{}", self.width, self.height));
        }
        if !(self.focal_x > 0.0 && self.focal_y > 0.0) {
            return bad("focal lengths must be positive".into());
        }
        let r = self.rotation();
        let err = (r.transpose() * r - Matrix3::identity()).abs().max();
        if !(err <= 1e-5) {
            return bad(format!("rotation not orthonormal (error {err:e})"));
        }
        let bottom = self.world_to_camera.row(3);
        if bottom[0] != 0.0 || bottom[1] != 0.0 || bottom[2] != 0.0 || bottom[3] != 1.0 {
            return bad("last row of world_to_camera must be [0 0 0 1]".into());
        }
        Ok(())
    }
}
