//! Task description: scene, demonstration script, optimizer settings, and
//! the ground-truth success predicate the engine reports against.

use alloc::string::String;

use glam::DVec3;

use crate::geometry::ObjectId;
use crate::optimize::CmaConfig;
use crate::oracle::DemoScript;
use crate::sim::{SceneConfig, SimState};
use crate::supervision::CostWeights;

/// A fully specified desk task.
#[derive(Clone, Debug)]
pub struct TaskDefinition {
    pub name: String,
    pub description: String,
    pub scene: SceneConfig,
    pub script: DemoScript,
    pub weights: CostWeights,
    pub cma: CmaConfig,
    /// Keyframe stride; None picks video_len / 8.
    pub keyframe_stride: Option<usize>,
    /// Candidate videos generated per run.
    pub candidates: usize,
    pub success: SuccessPredicate,
}

impl TaskDefinition {
    pub fn segment_duration(&self) -> f64 {
        self.script.success().trajectory.segment_duration
    }
}

/// Machine-checkable task completion, evaluated on a final simulation state.
/// Each predicate also reports a scalar progress metric for reporting.
#[derive(Clone, Debug, PartialEq)]
pub enum SuccessPredicate {
    /// The object's position reached `point` within `radius` (optionally
    /// ignoring z).
    NearPoint {
        object: ObjectId,
        point: DVec3,
        radius: f64,
        horizontal_only: bool,
    },
    /// Constrained DOF drove below the threshold (hammered peg).
    ScalarBelow { object: ObjectId, threshold: f64 },
    /// Constrained DOF rose above the threshold (opened door).
    ScalarAbove { object: ObjectId, threshold: f64 },
    /// At least `fraction` of the blob's particles lie inside the box.
    ParticlesInBox {
        object: ObjectId,
        min: DVec3,
        max: DVec3,
        fraction: f64,
    },
    /// Every anchor point is horizontally inside the blob's convex footprint
    /// and the blob settled below `max_height` (band stretched over posts).
    BlobOverAnchors {
        object: ObjectId,
        anchors: alloc::vec::Vec<DVec3>,
        capture_radius: f64,
        max_height: f64,
    },
}

/// (satisfied, progress metric). The metric is predicate-specific: distances
/// in meters, fractions, or angles; smaller is not always better, it is
/// only for human-readable reports.
pub fn evaluate_success(
    predicate: &SuccessPredicate,
    state: &SimState,
    scene: &SceneConfig,
) -> (bool, f64) {
    match predicate {
        SuccessPredicate::NearPoint {
            object,
            point,
            radius,
            horizontal_only,
        } => {
            let Some(index) = scene.index_of(*object) else {
                return (false, f64::INFINITY);
            };
            let Some(pose) = state.pose_of(index) else {
                return (false, f64::INFINITY);
            };
            let delta = pose.position - *point;
            let dist = if *horizontal_only {
                DVec3::new(delta.x, delta.y, 0.0).length()
            } else {
                delta.length()
            };
            (dist <= *radius, dist)
        }
        SuccessPredicate::ScalarBelow { object, threshold } => {
            let value = scene
                .index_of(*object)
                .and_then(|i| state.scalar_of(i))
                .unwrap_or(f64::INFINITY);
            (value <= *threshold, value)
        }
        SuccessPredicate::ScalarAbove { object, threshold } => {
            let value = scene
                .index_of(*object)
                .and_then(|i| state.scalar_of(i))
                .unwrap_or(f64::NEG_INFINITY);
            (value >= *threshold, value)
        }
        SuccessPredicate::ParticlesInBox {
            object,
            min,
            max,
            fraction,
        } => {
            let Some(index) = scene.index_of(*object) else {
                return (false, 0.0);
            };
            let Some(particles) = state.particles_of(index) else {
                return (false, 0.0);
            };
            let inside = particles
                .iter()
                .filter(|p| {
                    p.x >= min.x
                        && p.x <= max.x
                        && p.y >= min.y
                        && p.y <= max.y
                        && p.z >= min.z
                        && p.z <= max.z
                })
                .count();
            let got = inside as f64 / particles.len() as f64;
            (got >= *fraction, got)
        }
        SuccessPredicate::BlobOverAnchors {
            object,
            anchors,
            capture_radius,
            max_height,
        } => {
            let Some(index) = scene.index_of(*object) else {
                return (false, f64::INFINITY);
            };
            let Some(particles) = state.particles_of(index) else {
                return (false, f64::INFINITY);
            };
            // worst anchor: distance from the anchor axis to the nearest
            // particle, horizontally
            let mut worst = 0.0f64;
            for a in anchors {
                let mut best = f64::INFINITY;
                for p in particles {
                    let d = DVec3::new(p.x - a.x, p.y - a.y, 0.0).length();
                    if d < best {
                        best = d;
                    }
                }
                worst = worst.max(best);
            }
            let mean_z =
                particles.iter().map(|p| p.z).sum::<f64>() / particles.len() as f64;
            // captured: every anchor has band material nearby AND the band
            // wraps around: anchors lie inside the horizontal bounding hull
            let inside_hull = anchors.iter().all(|a| {
                let (mut min_x, mut max_x) = (f64::INFINITY, f64::NEG_INFINITY);
                let (mut min_y, mut max_y) = (f64::INFINITY, f64::NEG_INFINITY);
                for p in particles {
                    min_x = min_x.min(p.x);
                    max_x = max_x.max(p.x);
                    min_y = min_y.min(p.y);
                    max_y = max_y.max(p.y);
                }
                a.x >= min_x && a.x <= max_x && a.y >= min_y && a.y <= max_y
            });
            let ok = worst <= *capture_radius && mean_z <= *max_height && inside_hull;
            (ok, worst)
        }
    }
}
