//! Depth and segmentation rasterizer.
//!
//! Produces the engine-side observations that supervision terms compare
//! against video-derived observations: z-buffered triangle rasterization for
//! meshes, screen-space discs for particles, nearest surface wins each pixel,
//! ties at equal depth broken by the lower object id. Pure function of its
//! inputs; no anti-aliasing, no lighting.

use alloc::vec;
use alloc::vec::Vec;

use glam::DVec3;

use crate::geometry::{CameraModel, DepthMap, ObjectId, Pose6D, SegMask, TriMesh};

/// One rendered frame: depth, labels, and (optionally) a flat-shaded color
/// image for debugging and video synthesis.
#[derive(Clone, Debug)]
pub struct FrameObservation {
    pub depth: DepthMap,
    pub seg: SegMask,
    pub color: Option<ColorImage>,
    pub frame_index: usize,
    pub camera: CameraModel,
}

/// 8-bit RGB image, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ColorImage {
    pub width: u32,
    pub height: u32,
    pub rgb: Vec<[u8; 3]>,
}

impl ColorImage {
    pub fn filled(width: u32, height: u32, color: [u8; 3]) -> Self {
        ColorImage {
            width,
            height,
            rgb: vec![color; (width * height) as usize],
        }
    }

    /// Binary PPM (P6) bytes.
    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = alloc::format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        for px in &self.rgb {
            out.extend_from_slice(px);
        }
        out
    }
}

/// Deterministic flat color for an object id.
pub fn palette_color(id: ObjectId) -> [u8; 3] {
    if id.is_background() {
        return [16, 16, 16];
    }
    let h = (id.0 as u64).wrapping_mul(0x9e3779b97f4a7c15);
    [
        64 + (h >> 8) as u8 % 192,
        64 + (h >> 24) as u8 % 192,
        64 + (h >> 40) as u8 % 192,
    ]
}

/// Something the rasterizer can draw.
pub enum RenderItem<'a> {
    Mesh {
        mesh: &'a TriMesh,
        pose: Pose6D,
        id: ObjectId,
    },
    /// World-frame particle centers splatted as discs of `radius`.
    Points {
        points: &'a [DVec3],
        radius: f64,
        id: ObjectId,
    },
}

const NEAR_PLANE: f64 = 1e-4;

struct Target {
    width: u32,
    height: u32,
    zbuf: Vec<f64>,
    labels: Vec<u16>,
}

impl Target {
    fn new(width: u32, height: u32) -> Self {
        let n = (width * height) as usize;
        Target {
            width,
            height,
            zbuf: vec![f64::INFINITY; n],
            labels: vec![0; n],
        }
    }

    #[inline]
    fn write(&mut self, x: u32, y: u32, depth: f64, id: ObjectId) {
        let i = (y * self.width + x) as usize;
        let current = self.zbuf[i];
        if depth < current || (depth == current && id.0 < self.labels[i]) {
            self.zbuf[i] = depth;
            self.labels[i] = id.0;
        }
    }
}

/// Rasterize a set of items through `cam`.
pub fn rasterize(
    items: &[RenderItem<'_>],
    cam: &CameraModel,
    with_color: bool,
    frame_index: usize,
) -> FrameObservation {
    let mut target = Target::new(cam.width, cam.height);
    for item in items {
        match item {
            RenderItem::Mesh { mesh, pose, id } => draw_mesh(&mut target, cam, mesh, pose, *id),
            RenderItem::Points { points, radius, id } => {
                draw_points(&mut target, cam, points, *radius, *id)
            }
        }
    }
    let mut depth = DepthMap::new_invalid(cam.width, cam.height);
    let mut seg = SegMask::new_background(cam.width, cam.height);
    for y in 0..cam.height {
        for x in 0..cam.width {
            let i = (y * cam.width + x) as usize;
            if target.zbuf[i].is_finite() {
                depth.set(x, y, target.zbuf[i]);
                seg.set_label(x, y, ObjectId(target.labels[i]));
            }
        }
    }
    let color = with_color.then(|| {
        let mut img =
            ColorImage::filled(cam.width, cam.height, palette_color(ObjectId::BACKGROUND));
        for y in 0..cam.height {
            for x in 0..cam.width {
                let i = (y * cam.width + x) as usize;
                if target.zbuf[i].is_finite() {
                    // cheap depth shading so motion is visible in dumps
                    let base = palette_color(ObjectId(target.labels[i]));
                    let shade = 1.0 / (1.0 + 0.4 * target.zbuf[i]);
                    img.rgb[i] = [
                        (base[0] as f64 * shade) as u8,
                        (base[1] as f64 * shade) as u8,
                        (base[2] as f64 * shade) as u8,
                    ];
                }
            }
        }
        img
    });
    FrameObservation {
        depth,
        seg,
        color,
        frame_index,
        camera: *cam,
    }
}

/// Depth-only render of a single mesh; the valid pixels are the silhouette.
/// This is the inner loop of pose fitting.
pub fn render_mesh_depth(mesh: &TriMesh, pose: &Pose6D, cam: &CameraModel) -> DepthMap {
    let mut target = Target::new(cam.width, cam.height);
    draw_mesh(&mut target, cam, mesh, pose, ObjectId(1));
    let mut depth = DepthMap::new_invalid(cam.width, cam.height);
    for y in 0..cam.height {
        for x in 0..cam.width {
            let i = (y * cam.width + x) as usize;
            if target.zbuf[i].is_finite() {
                depth.set(x, y, target.zbuf[i]);
            }
        }
    }
    depth
}

/// Depth render of one mesh restricted to the pixel window its projection
/// can touch. `depths` is row-major over the window; misses are +inf.
pub struct DepthWindow {
    pub x0: u32,
    pub y0: u32,
    pub width: u32,
    pub height: u32,
    pub depths: Vec<f64>,
}

impl DepthWindow {
    fn empty() -> Self {
        DepthWindow {
            x0: 0,
            y0: 0,
            width: 0,
            height: 0,
            depths: Vec::new(),
        }
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> Option<f64> {
        if x < self.x0 || y < self.y0 {
            return None;
        }
        let (dx, dy) = (x - self.x0, y - self.y0);
        if dx >= self.width || dy >= self.height {
            return None;
        }
        let d = self.depths[(dy * self.width + dx) as usize];
        d.is_finite().then_some(d)
    }
}

/// Windowed single-mesh depth render, pixel-exact against the full-frame
/// path: the window is derived from the projected corners of the mesh's
/// bounding box (falling back to the full frame when any corner crosses the
/// near plane).
pub fn render_mesh_depth_window(mesh: &TriMesh, pose: &Pose6D, cam: &CameraModel) -> DepthWindow {
    let to_cam = cam.world_to_camera.compose(pose);
    let (lo, hi) = mesh.aabb();
    let mut min_u = f64::INFINITY;
    let mut max_u = f64::NEG_INFINITY;
    let mut min_v = f64::INFINITY;
    let mut max_v = f64::NEG_INFINITY;
    let mut near_clip = false;
    for corner in 0..8 {
        let p = DVec3::new(
            if corner & 1 == 0 { lo.x } else { hi.x },
            if corner & 2 == 0 { lo.y } else { hi.y },
            if corner & 4 == 0 { lo.z } else { hi.z },
        );
        let c = to_cam.transform_point(p);
        if c.z <= NEAR_PLANE * 2.0 {
            near_clip = true;
            break;
        }
        let u = cam.cx + cam.fx * c.x / c.z;
        let v = cam.cy + cam.fy * c.y / c.z;
        min_u = min_u.min(u);
        max_u = max_u.max(u);
        min_v = min_v.min(v);
        max_v = max_v.max(v);
    }
    let (x0, y0, x1, y1) = if near_clip {
        (0i64, 0i64, cam.width as i64 - 1, cam.height as i64 - 1)
    } else {
        (
            (libm::floor(min_u) as i64 - 1).max(0),
            (libm::floor(min_v) as i64 - 1).max(0),
            (libm::ceil(max_u) as i64 + 1).min(cam.width as i64 - 1),
            (libm::ceil(max_v) as i64 + 1).min(cam.height as i64 - 1),
        )
    };
    if x0 > x1 || y0 > y1 {
        return DepthWindow::empty();
    }
    let mut win = DepthWindow {
        x0: x0 as u32,
        y0: y0 as u32,
        width: (x1 - x0 + 1) as u32,
        height: (y1 - y0 + 1) as u32,
        depths: vec![f64::INFINITY; ((x1 - x0 + 1) * (y1 - y0 + 1)) as usize],
    };
    let verts: Vec<DVec3> = mesh
        .vertices()
        .iter()
        .map(|v| to_cam.transform_point(*v))
        .collect();
    for tri in mesh.triangles() {
        let a = verts[tri[0] as usize];
        let b = verts[tri[1] as usize];
        let c = verts[tri[2] as usize];
        let mut poly = [DVec3::ZERO; 4];
        let n = clip_near(&[a, b, c], &mut poly);
        if n < 3 {
            continue;
        }
        for k in 1..n - 1 {
            raster_triangle_window(&mut win, cam, poly[0], poly[k], poly[k + 1]);
        }
    }
    win
}

fn raster_triangle_window(win: &mut DepthWindow, cam: &CameraModel, a: DVec3, b: DVec3, c: DVec3) {
    let pa = (
        cam.cx + cam.fx * a.x / a.z,
        cam.cy + cam.fy * a.y / a.z,
        1.0 / a.z,
    );
    let pb = (
        cam.cx + cam.fx * b.x / b.z,
        cam.cy + cam.fy * b.y / b.z,
        1.0 / b.z,
    );
    let pc = (
        cam.cx + cam.fx * c.x / c.z,
        cam.cy + cam.fy * c.y / c.z,
        1.0 / c.z,
    );
    let area = edge(pa, pb, (pc.0, pc.1));
    if area.abs() < 1e-12 {
        return;
    }
    let (pa, pb, pc) = if area > 0.0 { (pa, pb, pc) } else { (pa, pc, pb) };
    let inv_area = 1.0 / area.abs();
    let wx1 = (win.x0 + win.width - 1) as i64;
    let wy1 = (win.y0 + win.height - 1) as i64;
    let min_x = (libm::floor(pa.0.min(pb.0).min(pc.0)) as i64).max(win.x0 as i64);
    let max_x = (libm::ceil(pa.0.max(pb.0).max(pc.0)) as i64).min(wx1);
    let min_y = (libm::floor(pa.1.min(pb.1).min(pc.1)) as i64).max(win.y0 as i64);
    let max_y = (libm::ceil(pa.1.max(pb.1).max(pc.1)) as i64).min(wy1);
    if min_x > max_x || min_y > max_y {
        return;
    }
    for y in min_y..=max_y {
        for x in min_x..=max_x {
            let p = (x as f64 + 0.5, y as f64 + 0.5);
            let w0 = edge(pb, pc, p) * inv_area;
            let w1 = edge(pc, pa, p) * inv_area;
            let w2 = edge(pa, pb, p) * inv_area;
            if w0 < 0.0 || w1 < 0.0 || w2 < 0.0 {
                continue;
            }
            let inv_z = w0 * pa.2 + w1 * pb.2 + w2 * pc.2;
            if inv_z <= 0.0 {
                continue;
            }
            let depth = 1.0 / inv_z;
            let i =
                ((y as u32 - win.y0) * win.width + (x as u32 - win.x0)) as usize;
            if depth < win.depths[i] {
                win.depths[i] = depth;
            }
        }
    }
}

fn draw_mesh(target: &mut Target, cam: &CameraModel, mesh: &TriMesh, pose: &Pose6D, id: ObjectId) {
    let to_cam = cam.world_to_camera.compose(pose);
    let verts: Vec<DVec3> = mesh
        .vertices()
        .iter()
        .map(|v| to_cam.transform_point(*v))
        .collect();
    for tri in mesh.triangles() {
        let a = verts[tri[0] as usize];
        let b = verts[tri[1] as usize];
        let c = verts[tri[2] as usize];
        // near-plane clip, then rasterize the resulting fan
        let mut poly = [DVec3::ZERO; 4];
        let n = clip_near(&[a, b, c], &mut poly);
        if n < 3 {
            continue;
        }
        for k in 1..n - 1 {
            raster_triangle(target, cam, poly[0], poly[k], poly[k + 1], id);
        }
    }
}

/// Sutherland–Hodgman clip of a camera-space triangle against z = NEAR_PLANE.
/// Returns the vertex count written to `out` (0, 3, or 4).
fn clip_near(tri: &[DVec3; 3], out: &mut [DVec3; 4]) -> usize {
    let mut n = 0;
    for i in 0..3 {
        let cur = tri[i];
        let next = tri[(i + 1) % 3];
        let cur_in = cur.z > NEAR_PLANE;
        let next_in = next.z > NEAR_PLANE;
        if cur_in {
            out[n] = cur;
            n += 1;
        }
        if cur_in != next_in {
            let t = (NEAR_PLANE - cur.z) / (next.z - cur.z);
            out[n] = cur + (next - cur) * t;
            n += 1;
        }
    }
    n
}

fn raster_triangle(
    target: &mut Target,
    cam: &CameraModel,
    a: DVec3,
    b: DVec3,
    c: DVec3,
    id: ObjectId,
) {
    // screen coordinates and inverse depth
    let pa = (
        cam.cx + cam.fx * a.x / a.z,
        cam.cy + cam.fy * a.y / a.z,
        1.0 / a.z,
    );
    let pb = (
        cam.cx + cam.fx * b.x / b.z,
        cam.cy + cam.fy * b.y / b.z,
        1.0 / b.z,
    );
    let pc = (
        cam.cx + cam.fx * c.x / c.z,
        cam.cy + cam.fy * c.y / c.z,
        1.0 / c.z,
    );
    let area = edge(pa, pb, (pc.0, pc.1));
    if area.abs() < 1e-12 {
        return;
    }
    // orient consistently so the inside test works for both windings
    let (pa, pb, pc) = if area > 0.0 { (pa, pb, pc) } else { (pa, pc, pb) };
    let inv_area = 1.0 / area.abs();
    let min_x = libm::floor(pa.0.min(pb.0).min(pc.0)).max(0.0) as i64;
    let max_x = (libm::ceil(pa.0.max(pb.0).max(pc.0)) as i64).min(target.width as i64 - 1);
    let min_y = libm::floor(pa.1.min(pb.1).min(pc.1)).max(0.0) as i64;
    let max_y = (libm::ceil(pa.1.max(pb.1).max(pc.1)) as i64).min(target.height as i64 - 1);
    if min_x > max_x || min_y > max_y {
        return;
    }
    for y in min_y..=max_y {
        for x in min_x..=max_x {
            let p = (x as f64 + 0.5, y as f64 + 0.5);
            let w0 = edge(pb, pc, p) * inv_area;
            let w1 = edge(pc, pa, p) * inv_area;
            let w2 = edge(pa, pb, p) * inv_area;
            if w0 < 0.0 || w1 < 0.0 || w2 < 0.0 {
                continue;
            }
            let inv_z = w0 * pa.2 + w1 * pb.2 + w2 * pc.2;
            if inv_z <= 0.0 {
                continue;
            }
            target.write(x as u32, y as u32, 1.0 / inv_z, id);
        }
    }
}

#[inline]
fn edge(a: (f64, f64, f64), b: (f64, f64, f64), p: (f64, f64)) -> f64 {
    (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0)
}

fn draw_points(
    target: &mut Target,
    cam: &CameraModel,
    points: &[DVec3],
    radius: f64,
    id: ObjectId,
) {
    for p in points {
        let c = cam.to_camera(*p);
        if c.z <= NEAR_PLANE {
            continue;
        }
        let u = cam.cx + cam.fx * c.x / c.z;
        let v = cam.cy + cam.fy * c.y / c.z;
        // screen-space disc of the projected radius, at least one pixel
        let r = (cam.fx * radius / c.z).max(1.0);
        let min_x = libm::floor(u - r).max(0.0) as i64;
        let max_x = (libm::ceil(u + r) as i64).min(target.width as i64 - 1);
        let min_y = libm::floor(v - r).max(0.0) as i64;
        let max_y = (libm::ceil(v + r) as i64).min(target.height as i64 - 1);
        if min_x > max_x || min_y > max_y {
            continue;
        }
        for y in min_y..=max_y {
            for x in min_x..=max_x {
                let dx = x as f64 + 0.5 - u;
                let dy = y as f64 + 0.5 - v;
                if dx * dx + dy * dy <= r * r {
                    target.write(x as u32, y as u32, c.z, id);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{backproject, Projection};

    fn front_cam() -> CameraModel {
        CameraModel::new(200.0, 200.0, 128.0, 128.0, Pose6D::IDENTITY, 256, 256).unwrap()
    }

    #[test]
    fn empty_scene_renders_invalid() {
        let cam = front_cam();
        let obs = rasterize(&[], &cam, false, 0);
        assert_eq!(obs.depth.valid_count(), 0);
        assert!(obs.seg.is_empty_for(ObjectId(1)));
    }

    #[test]
    fn cube_front_face_depth() {
        let cam = front_cam();
        let mesh = TriMesh::box_mesh(DVec3::splat(0.5));
        let pose = Pose6D::from_translation(DVec3::new(0.0, 0.0, 2.0));
        let obs = rasterize(
            &[RenderItem::Mesh {
                mesh: &mesh,
                pose,
                id: ObjectId(1),
            }],
            &cam,
            false,
            0,
        );
        // center pixel sees the front face at 2 - 0.5 = 1.5
        let d = obs.depth.get(128, 128).unwrap();
        assert!((d - 1.5).abs() < 1e-4, "depth {d}");
        assert_eq!(obs.seg.label_at(128, 128), ObjectId(1));
    }

    #[test]
    fn nearer_object_occludes() {
        let cam = front_cam();
        let mesh = TriMesh::box_mesh(DVec3::splat(0.2));
        let far = Pose6D::from_translation(DVec3::new(0.0, 0.0, 3.0));
        let near = Pose6D::from_translation(DVec3::new(0.0, 0.0, 1.5));
        let obs = rasterize(
            &[
                RenderItem::Mesh {
                    mesh: &mesh,
                    pose: far,
                    id: ObjectId(1),
                },
                RenderItem::Mesh {
                    mesh: &mesh,
                    pose: near,
                    id: ObjectId(2),
                },
            ],
            &cam,
            false,
            0,
        );
        assert_eq!(obs.seg.label_at(128, 128), ObjectId(2));
        assert!((obs.depth.get(128, 128).unwrap() - 1.3).abs() < 1e-4);
    }

    #[test]
    fn equal_depth_tie_goes_to_lower_id() {
        let cam = front_cam();
        let mesh = TriMesh::box_mesh(DVec3::splat(0.2));
        let pose = Pose6D::from_translation(DVec3::new(0.0, 0.0, 2.0));
        let obs = rasterize(
            &[
                RenderItem::Mesh {
                    mesh: &mesh,
                    pose,
                    id: ObjectId(5),
                },
                RenderItem::Mesh {
                    mesh: &mesh,
                    pose,
                    id: ObjectId(3),
                },
            ],
            &cam,
            false,
            0,
        );
        assert_eq!(obs.seg.label_at(128, 128), ObjectId(3));
    }

    #[test]
    fn translating_object_shifts_mask_centroid() {
        let cam = front_cam();
        let mesh = TriMesh::box_mesh(DVec3::splat(0.1));
        let centroid_u = |dx: f64| -> f64 {
            let pose = Pose6D::from_translation(DVec3::new(dx, 0.0, 2.0));
            let obs = rasterize(
                &[RenderItem::Mesh {
                    mesh: &mesh,
                    pose,
                    id: ObjectId(1),
                }],
                &cam,
                false,
                0,
            );
            let mut sum = 0.0;
            let mut n = 0.0;
            for y in 0..256 {
                for x in 0..256 {
                    if obs.seg.label_at(x, y) == ObjectId(1) {
                        sum += x as f64;
                        n += 1.0;
                    }
                }
            }
            sum / n
        };
        assert!(centroid_u(0.1) > centroid_u(0.0) + 5.0);
    }

    #[test]
    fn rendered_depth_backprojects_onto_surface() {
        let cam = CameraModel::look_at(
            200.0,
            200.0,
            128.0,
            128.0,
            DVec3::new(0.4, -0.8, 0.7),
            DVec3::ZERO,
            DVec3::Z,
            256,
            256,
        )
        .unwrap();
        let mesh = TriMesh::box_mesh(DVec3::new(0.15, 0.1, 0.05));
        let pose = Pose6D::new(
            DVec3::new(0.02, 0.01, 0.0),
            glam::DQuat::from_axis_angle(DVec3::Z, 0.4),
        );
        let obs = rasterize(
            &[RenderItem::Mesh {
                mesh: &mesh,
                pose,
                id: ObjectId(1),
            }],
            &cam,
            false,
            0,
        );
        let cloud = backproject(&obs.depth, &obs.seg, ObjectId(1), &cam).unwrap();
        assert!(!cloud.is_empty());
        let inv = pose.inverse();
        for p in cloud.points().iter().step_by(17) {
            let local = inv.transform_point(*p);
            let hit = mesh.signed_distance(local);
            let depth = cam.to_camera(*p).z;
            let footprint = 2.0 * depth / cam.fx;
            assert!(
                hit.distance.abs() <= footprint,
                "surface residual {} exceeds {footprint}",
                hit.distance
            );
        }
    }

    #[test]
    fn splats_are_at_least_one_pixel() {
        let cam = front_cam();
        let pts = [DVec3::new(0.0, 0.0, 2.0)];
        let obs = rasterize(
            &[RenderItem::Points {
                points: &pts,
                radius: 1e-5,
                id: ObjectId(4),
            }],
            &cam,
            false,
            0,
        );
        assert!(obs.seg.count_label(ObjectId(4)) >= 1);
        assert!((obs.depth.get(128, 128).unwrap() - 2.0).abs() < 1e-9);
    }

    #[test]
    fn reprojection_lands_within_half_pixel() {
        let cam = front_cam();
        let mesh = TriMesh::box_mesh(DVec3::new(0.2, 0.15, 0.1));
        let pose = Pose6D::new(
            DVec3::new(0.05, -0.03, 1.8),
            glam::DQuat::from_axis_angle(DVec3::new(1.0, 1.0, 0.3).normalize(), 0.7),
        );
        let obs = rasterize(
            &[RenderItem::Mesh {
                mesh: &mesh,
                pose,
                id: ObjectId(1),
            }],
            &cam,
            false,
            0,
        );
        let mut checked = 0;
        for y in (0..256).step_by(3) {
            for x in (0..256).step_by(3) {
                if let Some(d) = obs.depth.get(x, y) {
                    let world = cam.backproject_pixel(x, y, d);
                    match cam.project(world) {
                        Projection::Visible { u, v, .. } => {
                            assert!((u - (x as f64 + 0.5)).abs() <= 0.5);
                            assert!((v - (y as f64 + 0.5)).abs() <= 0.5);
                            checked += 1;
                        }
                        _ => panic!("reprojection left the frustum"),
                    }
                }
            }
        }
        assert!(checked > 50);
    }

    #[test]
    fn render_is_deterministic() {
        let cam = front_cam();
        let mesh = TriMesh::box_mesh(DVec3::splat(0.2));
        let pts = [DVec3::new(0.1, 0.0, 1.0), DVec3::new(-0.1, 0.05, 1.2)];
        let items = || {
            [
                RenderItem::Mesh {
                    mesh: &mesh,
                    pose: Pose6D::from_translation(DVec3::new(0.0, 0.0, 2.0)),
                    id: ObjectId(1),
                },
                RenderItem::Points {
                    points: &pts,
                    radius: 0.02,
                    id: ObjectId(2),
                },
            ]
        };
        let a = rasterize(&items(), &cam, true, 3);
        let b = rasterize(&items(), &cam, true, 3);
        assert_eq!(a.depth, b.depth);
        assert_eq!(a.seg, b.seg);
        assert_eq!(a.color, b.color);
    }

    #[test]
    fn ppm_header_is_wellformed() {
        let img = ColorImage::filled(4, 2, [1, 2, 3]);
        let ppm = img.to_ppm();
        assert!(ppm.starts_with(b"P6\n4 2\n255\n"));
        assert_eq!(ppm.len(), 11 + 24);
    }
}
