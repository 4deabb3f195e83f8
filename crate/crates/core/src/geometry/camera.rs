use glam::DVec3;

use super::{DepthMap, GeometryError, ObjectId, PointCloud, Pose6D, SegMask};

/// Minimum camera-space depth considered in front of the camera.
pub(crate) const MIN_DEPTH: f64 = 1e-9;

/// Pinhole camera: intrinsics, a world-to-camera extrinsic, and the image
/// resolution. Camera space is +z forward, +x right, +y down (image rows).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub world_to_camera: Pose6D,
    pub width: u32,
    pub height: u32,
}

/// Outcome of projecting a world point. Out-of-frustum is a value, not an
/// error: callers routinely probe points behind the camera.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Projection {
    Visible { u: f64, v: f64, depth: f64 },
    OutOfFrustum,
}

impl CameraModel {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        world_to_camera: Pose6D,
        width: u32,
        height: u32,
    ) -> Result<Self, GeometryError> {
        if !(fx > 0.0 && fy > 0.0) {
            return Err(GeometryError::InvalidCamera("focal lengths must be positive"));
        }
        if !(0.0..width as f64).contains(&cx) || !(0.0..height as f64).contains(&cy) {
            return Err(GeometryError::InvalidCamera(
                "principal point must lie inside the image",
            ));
        }
        if width == 0 || height == 0 {
            return Err(GeometryError::InvalidCamera("zero resolution"));
        }
        Ok(CameraModel {
            fx,
            fy,
            cx,
            cy,
            world_to_camera,
            width,
            height,
        })
    }

    /// A camera at `eye` looking toward `target` with `up` as the vertical
    /// reference (image rows grow opposite `up`).
    #[allow(clippy::too_many_arguments)]
    pub fn look_at(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        eye: DVec3,
        target: DVec3,
        up: DVec3,
        width: u32,
        height: u32,
    ) -> Result<Self, GeometryError> {
        let forward = (target - eye).normalize();
        let right = forward.cross(up).normalize();
        let down = forward.cross(right);
        // Rows of the rotation matrix = camera axes in world coordinates.
        let m = glam::DMat3::from_cols(right, down, forward).transpose();
        let q = glam::DQuat::from_mat3(&m);
        let cam_from_world = Pose6D::new(-(q * eye), q);
        CameraModel::new(fx, fy, cx, cy, cam_from_world, width, height)
    }

    pub fn to_camera(&self, world: DVec3) -> DVec3 {
        self.world_to_camera.transform_point(world)
    }

    pub fn to_world(&self, camera: DVec3) -> DVec3 {
        self.world_to_camera.inverse().transform_point(camera)
    }

    /// Pinhole projection to continuous pixel coordinates.
    pub fn project(&self, world: DVec3) -> Projection {
        let c = self.to_camera(world);
        if c.z <= MIN_DEPTH {
            return Projection::OutOfFrustum;
        }
        let u = self.cx + self.fx * c.x / c.z;
        let v = self.cy + self.fy * c.y / c.z;
        if u < 0.0 || u >= self.width as f64 || v < 0.0 || v >= self.height as f64 {
            return Projection::OutOfFrustum;
        }
        Projection::Visible { u, v, depth: c.z }
    }

    /// World point seen at the center of pixel `(px, py)` at camera depth
    /// `depth`.
    pub fn backproject_pixel(&self, px: u32, py: u32, depth: f64) -> DVec3 {
        let u = px as f64 + 0.5;
        let v = py as f64 + 0.5;
        let x = (u - self.cx) * depth / self.fx;
        let y = (v - self.cy) * depth / self.fy;
        self.to_world(DVec3::new(x, y, depth))
    }
}

/// Lift every valid masked pixel of `depth` into a world-frame point cloud.
/// The cloud is empty iff no valid masked pixel exists.
pub fn backproject(
    depth: &DepthMap,
    mask: &SegMask,
    label: ObjectId,
    cam: &CameraModel,
) -> Result<PointCloud, GeometryError> {
    if depth.width() != mask.width() || depth.height() != mask.height() {
        return Err(GeometryError::ResolutionMismatch(
            depth.width(),
            depth.height(),
            mask.width(),
            mask.height(),
        ));
    }
    let mut points = alloc::vec::Vec::new();
    for y in 0..depth.height() {
        for x in 0..depth.width() {
            if mask.label_at(x, y) != label {
                continue;
            }
            if let Some(d) = depth.get(x, y) {
                points.push(cam.backproject_pixel(x, y, d));
            }
        }
    }
    Ok(PointCloud::new(points))
}
