//! Core spatial types and metric kernels shared by every other module.
//!
//! World units are meters, angles are radians, and the camera convention is
//! +z forward in camera space with pixel sample points at cell centers.

mod camera;
mod cloud;
mod depth;
mod mask;
mod mesh;
mod pose;

pub use camera::{backproject, CameraModel, Projection};
pub use cloud::{chamfer, PointCloud};
pub use depth::DepthMap;
pub use mask::{iou, ObjectId, SegMask};
pub use mesh::{SurfaceHit, TriMesh};
pub use pose::Pose6D;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("resolution mismatch: {0}x{1} vs {2}x{3}")]
    ResolutionMismatch(u32, u32, u32, u32),
    #[error("invalid camera: {0}")]
    InvalidCamera(&'static str),
    #[error("point cloud is empty")]
    EmptyCloud,
    #[error("mesh has no usable triangles")]
    EmptyMesh,
    #[error("triangle index {0} out of range for {1} vertices")]
    IndexOutOfRange(u32, usize),
    #[error("bad {kind} payload: {reason}")]
    BadFormat {
        kind: &'static str,
        reason: &'static str,
    },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
}
