//! Click-prompted instance segmentation for Gaussian-splat scenes.
//!
//! The pipeline runs in four stages:
//!
//! - [`prompt`] turns a 2D click into a 3D anchor on the splat surface and a
//!   per-primitive relevance weight map.
//! - [`decoder`] crops a vertical cylinder around the anchor, batches the
//!   points, runs a [`decoder::SegmentationBackend`] and writes instance
//!   labels back into the scene.
//! - [`projection`] stamps per-primitive labels into a 2D [`InstanceMask`] for
//!   any camera with a tile-based rasterizer.
//! - [`refine`] cleans the raw masks (closing, hole filling, largest
//!   component).
//!
//! [`metrics`] implements the 3D/2D/instance evaluation suite, [`scene`]
//! handles PLY, COLMAP and dataset ingestion, and [`synth`] generates
//! synthetic scenes with known ground truth.

pub mod decoder;
pub mod mask;
pub mod metrics;
pub mod projection;
pub mod prompt;
pub mod refine;
pub mod scene;
pub mod synth;

pub use mask::InstanceMask;
pub use scene::{CameraView, GaussianPrimitive, GaussianScene};
