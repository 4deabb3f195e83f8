use alloc::vec::Vec;

use glam::DVec3;

use super::GeometryError;

/// Triangle mesh in the object frame. Degenerate (zero-area) triangles are
/// dropped at construction; faces must wind counter-clockwise seen from
/// outside for signed distances to make sense.
#[derive(Clone, Debug, PartialEq)]
pub struct TriMesh {
    vertices: Vec<DVec3>,
    triangles: Vec<[u32; 3]>,
    face_normals: Vec<DVec3>,
    convex: bool,
    samples: Vec<DVec3>,
    bounding_radius: f64,
    aabb: (DVec3, DVec3),
    /// Analytic fast path when the mesh is exactly an origin-centered box.
    box_half: Option<DVec3>,
}

/// Closest-surface query result. `distance` is negative inside the mesh.
#[derive(Clone, Copy, Debug)]
pub struct SurfaceHit {
    pub distance: f64,
    pub closest: DVec3,
    pub normal: DVec3,
}

const DEGENERATE_AREA: f64 = 1e-12;
const SAMPLE_AUGMENT_LIMIT: usize = 64;

impl TriMesh {
    pub fn new(vertices: Vec<DVec3>, triangles: Vec<[u32; 3]>) -> Result<Self, GeometryError> {
        if vertices.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::NonFinite("mesh vertices"));
        }
        let mut kept = Vec::with_capacity(triangles.len());
        let mut normals = Vec::with_capacity(triangles.len());
        for t in triangles {
            for &i in &t {
                if i as usize >= vertices.len() {
                    return Err(GeometryError::IndexOutOfRange(i, vertices.len()));
                }
            }
            let (a, b, c) = (
                vertices[t[0] as usize],
                vertices[t[1] as usize],
                vertices[t[2] as usize],
            );
            let n = (b - a).cross(c - a);
            let area2 = n.length();
            if area2 * 0.5 <= DEGENERATE_AREA {
                continue; // load-time cleanup
            }
            kept.push(t);
            normals.push(n / area2);
        }
        if kept.is_empty() {
            return Err(GeometryError::EmptyMesh);
        }
        let convex = Self::detect_convex(&vertices, &kept, &normals);
        let samples = Self::build_samples(&vertices, &kept);
        let bounding_radius = vertices
            .iter()
            .map(|v| v.length())
            .fold(0.0f64, f64::max);
        let mut lo = DVec3::splat(f64::INFINITY);
        let mut hi = DVec3::splat(f64::NEG_INFINITY);
        for v in &vertices {
            lo = lo.min(*v);
            hi = hi.max(*v);
        }
        let box_half = Self::detect_box(&vertices, &lo, &hi);
        Ok(TriMesh {
            vertices,
            triangles: kept,
            face_normals: normals,
            convex,
            samples,
            bounding_radius,
            aabb: (lo, hi),
            box_half,
        })
    }

    fn detect_box(vertices: &[DVec3], lo: &DVec3, hi: &DVec3) -> Option<DVec3> {
        if vertices.len() != 8 {
            return None;
        }
        if (*lo + *hi).length() > 1e-12 {
            return None; // not origin-centered
        }
        let h = *hi;
        let on_corner = |v: &DVec3| {
            (v.x.abs() - h.x).abs() < 1e-12
                && (v.y.abs() - h.y).abs() < 1e-12
                && (v.z.abs() - h.z).abs() < 1e-12
        };
        vertices.iter().all(on_corner).then_some(h)
    }

    /// Axis-aligned box centered at the origin.
    pub fn box_mesh(half_extents: DVec3) -> TriMesh {
        let h = half_extents;
        let v = alloc::vec![
            DVec3::new(-h.x, -h.y, -h.z),
            DVec3::new(h.x, -h.y, -h.z),
            DVec3::new(h.x, h.y, -h.z),
            DVec3::new(-h.x, h.y, -h.z),
            DVec3::new(-h.x, -h.y, h.z),
            DVec3::new(h.x, -h.y, h.z),
            DVec3::new(h.x, h.y, h.z),
            DVec3::new(-h.x, h.y, h.z),
        ];
        let t = alloc::vec![
            // -z
            [0, 2, 1],
            [0, 3, 2],
            // +z
            [4, 5, 6],
            [4, 6, 7],
            // -y
            [0, 1, 5],
            [0, 5, 4],
            // +y
            [2, 3, 7],
            [2, 7, 6],
            // -x
            [0, 4, 7],
            [0, 7, 3],
            // +x
            [1, 2, 6],
            [1, 6, 5],
        ];
        TriMesh::new(v, t).expect("box mesh is valid")
    }

    pub fn vertices(&self) -> &[DVec3] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[u32; 3]] {
        &self.triangles
    }

    pub fn is_convex(&self) -> bool {
        self.convex
    }

    pub fn bounding_radius(&self) -> f64 {
        self.bounding_radius
    }

    /// Object-frame axis-aligned bounds (min, max).
    pub fn aabb(&self) -> (DVec3, DVec3) {
        self.aabb
    }

    pub fn triangle_vertices(&self, i: usize) -> (DVec3, DVec3, DVec3) {
        let t = self.triangles[i];
        (
            self.vertices[t[0] as usize],
            self.vertices[t[1] as usize],
            self.vertices[t[2] as usize],
        )
    }

    /// Contact sample points: vertices, augmented with unique edge midpoints
    /// while the vertex count stays small.
    pub fn surface_samples(&self) -> &[DVec3] {
        &self.samples
    }

    fn build_samples(vertices: &[DVec3], triangles: &[[u32; 3]]) -> Vec<DVec3> {
        let mut samples = vertices.to_vec();
        if vertices.len() < SAMPLE_AUGMENT_LIMIT {
            let mut edges: Vec<(u32, u32)> = Vec::new();
            for t in triangles {
                for (a, b) in [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])] {
                    let e = if a < b { (a, b) } else { (b, a) };
                    if !edges.contains(&e) {
                        edges.push(e);
                    }
                }
            }
            for (a, b) in edges {
                samples.push((vertices[a as usize] + vertices[b as usize]) * 0.5);
            }
        }
        samples
    }

    fn detect_convex(vertices: &[DVec3], triangles: &[[u32; 3]], normals: &[DVec3]) -> bool {
        for (t, n) in triangles.iter().zip(normals) {
            let anchor = vertices[t[0] as usize];
            for v in vertices {
                if (*v - anchor).dot(*n) > 1e-9 {
                    return false;
                }
            }
        }
        true
    }

    /// Signed distance from `p` (object frame) to the mesh surface, with the
    /// closest surface point and outward normal there.
    pub fn signed_distance(&self, p: DVec3) -> SurfaceHit {
        if let Some(h) = self.box_half {
            return box_signed_distance(p, h);
        }
        self.signed_distance_mesh(p)
    }

    fn signed_distance_mesh(&self, p: DVec3) -> SurfaceHit {
        let mut best_d2 = f64::INFINITY;
        let mut best_point = DVec3::ZERO;
        let mut best_tri = 0usize;
        for i in 0..self.triangles.len() {
            let (a, b, c) = self.triangle_vertices(i);
            let q = closest_point_on_triangle(p, a, b, c);
            let d2 = (p - q).length_squared();
            if d2 < best_d2 {
                best_d2 = d2;
                best_point = q;
                best_tri = i;
            }
        }
        let dist = libm::sqrt(best_d2);
        let inside = if self.convex {
            self.inside_convex(p)
        } else {
            self.inside_parity(p)
        };
        let normal = if dist > 1e-12 {
            let dir = (p - best_point) / dist;
            if inside {
                -dir
            } else {
                dir
            }
        } else {
            self.face_normals[best_tri]
        };
        SurfaceHit {
            distance: if inside { -dist } else { dist },
            closest: best_point,
            normal,
        }
    }

    fn inside_convex(&self, p: DVec3) -> bool {
        for (t, n) in self.triangles.iter().zip(&self.face_normals) {
            let anchor = self.vertices[t[0] as usize];
            if (p - anchor).dot(*n) > 0.0 {
                return false;
            }
        }
        true
    }

    fn inside_parity(&self, p: DVec3) -> bool {
        // odd crossings along fixed skew rays; majority of three directions
        // guards against edge-grazing miscounts
        let dirs = [
            DVec3::new(0.577_215, 0.618_034, 0.532_511).normalize(),
            DVec3::new(-0.718_281, 0.414_213, 0.261_803).normalize(),
            DVec3::new(0.302_775, -0.687_919, 0.546_101).normalize(),
        ];
        let mut votes = 0;
        for dir in dirs {
            let mut crossings = 0;
            for i in 0..self.triangles.len() {
                let (a, b, c) = self.triangle_vertices(i);
                if ray_hits_triangle(p, dir, a, b, c) {
                    crossings += 1;
                }
            }
            if crossings % 2 == 1 {
                votes += 1;
            }
        }
        votes >= 2
    }
}

fn box_signed_distance(p: DVec3, h: DVec3) -> SurfaceHit {
    let q = p.abs() - h;
    if q.max_element() <= 0.0 {
        // inside: exit through the least-penetrated face
        let axis = if q.x >= q.y && q.x >= q.z {
            0
        } else if q.y >= q.z {
            1
        } else {
            2
        };
        let sign = if p[axis] >= 0.0 { 1.0 } else { -1.0 };
        let mut normal = DVec3::ZERO;
        normal[axis] = sign;
        let mut closest = p;
        closest[axis] = sign * h[axis];
        SurfaceHit {
            distance: q.max_element(),
            closest,
            normal,
        }
    } else {
        let closest = p.clamp(-h, h);
        let delta = p - closest;
        let dist = delta.length();
        SurfaceHit {
            distance: dist,
            closest,
            normal: if dist > 1e-12 {
                delta / dist
            } else {
                DVec3::Z
            },
        }
    }
}

/// Closest point on triangle (a, b, c) to p. Ericson, Real-Time Collision
/// Detection, 5.1.5.
pub fn closest_point_on_triangle(p: DVec3, a: DVec3, b: DVec3, c: DVec3) -> DVec3 {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(ap);
    let d2 = ac.dot(ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return a;
    }
    let bp = p - b;
    let d3 = ab.dot(bp);
    let d4 = ac.dot(bp);
    if d3 >= 0.0 && d4 <= d3 {
        return b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return a + ab * v;
    }
    let cp = p - c;
    let d5 = ab.dot(cp);
    let d6 = ac.dot(cp);
    if d6 >= 0.0 && d5 <= d6 {
        return c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return a + ac * w;
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return b + (c - b) * w;
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    a + ab * v + ac * w
}

fn ray_hits_triangle(origin: DVec3, dir: DVec3, a: DVec3, b: DVec3, c: DVec3) -> bool {
    // Möller–Trumbore
    let e1 = b - a;
    let e2 = c - a;
    let h = dir.cross(e2);
    let det = e1.dot(h);
    if det.abs() < 1e-14 {
        return false;
    }
    let inv = 1.0 / det;
    let s = origin - a;
    let u = s.dot(h) * inv;
    if !(0.0..=1.0).contains(&u) {
        return false;
    }
    let q = s.cross(e1);
    let v = dir.dot(q) * inv;
    if v < 0.0 || u + v > 1.0 {
        return false;
    }
    e2.dot(q) * inv > 0.0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_mesh_is_convex_with_12_triangles() {
        let m = TriMesh::box_mesh(DVec3::splat(0.5));
        assert_eq!(m.triangles().len(), 12);
        assert!(m.is_convex());
        assert!((m.bounding_radius() - libm::sqrt(0.75)).abs() < 1e-12);
    }

    #[test]
    fn degenerate_triangles_are_dropped() {
        let v = alloc::vec![DVec3::ZERO, DVec3::X, DVec3::Y];
        let t = alloc::vec![[0, 1, 2], [0, 1, 1], [2, 2, 2]];
        let m = TriMesh::new(v, t).unwrap();
        assert_eq!(m.triangles().len(), 1);
    }

    #[test]
    fn all_degenerate_is_an_error() {
        let v = alloc::vec![DVec3::ZERO, DVec3::X];
        assert!(matches!(
            TriMesh::new(v, alloc::vec![[0, 1, 0]]),
            Err(GeometryError::EmptyMesh)
        ));
    }

    #[test]
    fn out_of_range_index_is_an_error() {
        let v = alloc::vec![DVec3::ZERO, DVec3::X, DVec3::Y];
        assert!(matches!(
            TriMesh::new(v, alloc::vec![[0, 1, 3]]),
            Err(GeometryError::IndexOutOfRange(3, 3))
        ));
    }

    #[test]
    fn signed_distance_outside_and_inside_box() {
        let m = TriMesh::box_mesh(DVec3::splat(0.5));
        let out = m.signed_distance(DVec3::new(1.0, 0.0, 0.0));
        assert!((out.distance - 0.5).abs() < 1e-12);
        assert!((out.normal - DVec3::X).length() < 1e-9);
        let inside = m.signed_distance(DVec3::new(0.4, 0.0, 0.0));
        assert!((inside.distance + 0.1).abs() < 1e-12, "{}", inside.distance);
        assert!((inside.normal - DVec3::X).length() < 1e-9);
        let center = m.signed_distance(DVec3::ZERO);
        assert!((center.distance + 0.5).abs() < 1e-12);
    }

    #[test]
    fn parity_inside_test_agrees_on_box() {
        let m = TriMesh::box_mesh(DVec3::new(0.3, 0.2, 0.1));
        let mut rng = crate::rng::Rng::seed_from(9);
        for _ in 0..200 {
            let p = DVec3::new(
                rng.uniform_in(-0.5, 0.5),
                rng.uniform_in(-0.5, 0.5),
                rng.uniform_in(-0.5, 0.5),
            );
            let expect_inside =
                p.x.abs() < 0.3 && p.y.abs() < 0.2 && p.z.abs() < 0.1;
            assert_eq!(m.inside_parity(p), expect_inside, "{p:?}");
            assert_eq!(m.inside_convex(p), expect_inside, "{p:?}");
        }
    }

    #[test]
    fn box_fast_path_matches_triangle_path() {
        let m = TriMesh::box_mesh(DVec3::new(0.25, 0.15, 0.35));
        let mut rng = crate::rng::Rng::seed_from(21);
        for _ in 0..300 {
            let p = DVec3::new(
                rng.uniform_in(-0.6, 0.6),
                rng.uniform_in(-0.6, 0.6),
                rng.uniform_in(-0.6, 0.6),
            );
            let fast = m.signed_distance(p);
            let slow = m.signed_distance_mesh(p);
            assert!(
                (fast.distance - slow.distance).abs() < 1e-9,
                "{p:?}: {} vs {}",
                fast.distance,
                slow.distance
            );
            assert!((fast.closest - slow.closest).length() < 1e-9);
        }
    }

    #[test]
    fn surface_samples_augmented_for_small_meshes() {
        let m = TriMesh::box_mesh(DVec3::splat(0.5));
        // 8 vertices + 18 unique edges
        assert_eq!(m.surface_samples().len(), 26);
    }
}
