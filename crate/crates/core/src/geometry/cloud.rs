use alloc::vec::Vec;

use glam::DVec3;

use super::{GeometryError, Pose6D};

/// World-frame point cloud.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct PointCloud {
    points: Vec<DVec3>,
}

impl PointCloud {
    pub fn new(points: Vec<DVec3>) -> Self {
        debug_assert!(points.iter().all(|p| p.is_finite()));
        PointCloud { points }
    }

    pub fn points(&self) -> &[DVec3] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn centroid(&self) -> Option<DVec3> {
        if self.points.is_empty() {
            return None;
        }
        Some(self.points.iter().copied().sum::<DVec3>() / self.points.len() as f64)
    }

    pub fn transformed(&self, pose: &Pose6D) -> PointCloud {
        PointCloud {
            points: self.points.iter().map(|p| pose.transform_point(*p)).collect(),
        }
    }
}

/// Left-balanced k-d tree over a borrowed point slice. Exact nearest-neighbor
/// queries; distances are computed with the same expression as the brute-force
/// scan so accelerated and naive results agree bitwise.
pub struct KdTree<'a> {
    points: &'a [DVec3],
    // node i covers `order[range]`; children split around the stored median.
    order: Vec<u32>,
    splits: Vec<Node>,
}

#[derive(Clone, Copy, Debug)]
struct Node {
    lo: u32,
    hi: u32,
    axis: u8,
    split: f64,
    left: i32,
    right: i32,
}

const LEAF_SIZE: usize = 8;

impl<'a> KdTree<'a> {
    pub fn build(points: &'a [DVec3]) -> Self {
        let mut order: Vec<u32> = (0..points.len() as u32).collect();
        let mut splits = Vec::new();
        if !points.is_empty() {
            let n = points.len();
            Self::build_node(points, &mut order, &mut splits, 0, n);
        }
        KdTree {
            points,
            order,
            splits,
        }
    }

    fn build_node(
        points: &[DVec3],
        order: &mut [u32],
        splits: &mut Vec<Node>,
        lo: usize,
        hi: usize,
    ) -> i32 {
        if hi - lo <= LEAF_SIZE {
            splits.push(Node {
                lo: lo as u32,
                hi: hi as u32,
                axis: 3, // leaf marker
                split: 0.0,
                left: -1,
                right: -1,
            });
            return (splits.len() - 1) as i32;
        }
        // split on the widest axis for balanced cells
        let mut min = DVec3::splat(f64::INFINITY);
        let mut max = DVec3::splat(f64::NEG_INFINITY);
        for &i in &order[lo..hi] {
            min = min.min(points[i as usize]);
            max = max.max(points[i as usize]);
        }
        let extent = max - min;
        let axis = if extent.x >= extent.y && extent.x >= extent.z {
            0
        } else if extent.y >= extent.z {
            1
        } else {
            2
        };
        let coord = |i: u32| points[i as usize][axis];
        let mid = (lo + hi) / 2;
        // deterministic median: stable comparator on (coordinate, index)
        order[lo..hi].sort_unstable_by(|a, b| {
            coord(*a)
                .partial_cmp(&coord(*b))
                .unwrap()
                .then(a.cmp(b))
        });
        let split = coord(order[mid]);
        let me = splits.len();
        splits.push(Node {
            lo: lo as u32,
            hi: hi as u32,
            axis: axis as u8,
            split,
            left: -1,
            right: -1,
        });
        let left = Self::build_node(points, order, splits, lo, mid);
        let right = Self::build_node(points, order, splits, mid, hi);
        splits[me].left = left;
        splits[me].right = right;
        me as i32
    }

    /// Distance from `q` to its nearest neighbor in the cloud.
    pub fn nearest_distance(&self, q: DVec3) -> f64 {
        debug_assert!(!self.points.is_empty());
        let mut best = f64::INFINITY;
        self.search(0, q, &mut best);
        libm::sqrt(best)
    }

    fn search(&self, node: i32, q: DVec3, best: &mut f64) {
        let n = self.splits[node as usize];
        if n.axis == 3 {
            for &i in &self.order[n.lo as usize..n.hi as usize] {
                let d2 = (self.points[i as usize] - q).length_squared();
                if d2 < *best {
                    *best = d2;
                }
            }
            return;
        }
        let delta = q[n.axis as usize] - n.split;
        let (near, far) = if delta < 0.0 {
            (n.left, n.right)
        } else {
            (n.right, n.left)
        };
        self.search(near, q, best);
        if delta * delta < *best {
            self.search(far, q, best);
        }
    }
}

/// Symmetric Chamfer distance in meters: the mean nearest-neighbor distance
/// from `a` to `b` plus the mean from `b` to `a`, divided by two.
pub fn chamfer(a: &PointCloud, b: &PointCloud) -> Result<f64, GeometryError> {
    if a.is_empty() || b.is_empty() {
        return Err(GeometryError::EmptyCloud);
    }
    let tree_b = KdTree::build(b.points());
    let mut sum_ab = 0.0;
    for p in a.points() {
        sum_ab += tree_b.nearest_distance(*p);
    }
    let tree_a = KdTree::build(a.points());
    let mut sum_ba = 0.0;
    for q in b.points() {
        sum_ba += tree_a.nearest_distance(*q);
    }
    Ok((sum_ab / a.len() as f64 + sum_ba / b.len() as f64) / 2.0)
}

#[cfg(test)]
pub(crate) fn chamfer_brute_force(a: &PointCloud, b: &PointCloud) -> f64 {
    let nearest = |p: DVec3, cloud: &PointCloud| {
        let mut best = f64::INFINITY;
        for q in cloud.points() {
            let d2 = (*q - p).length_squared();
            if d2 < best {
                best = d2;
            }
        }
        libm::sqrt(best)
    };
    let sum_ab: f64 = a.points().iter().map(|p| nearest(*p, b)).sum();
    let sum_ba: f64 = b.points().iter().map(|q| nearest(*q, a)).sum();
    (sum_ab / a.len() as f64 + sum_ba / b.len() as f64) / 2.0
}
