//! Thread-parallel candidate evaluation. Results are collected in candidate
//! order, so a parallel run is bitwise-identical to a serial one.

use rayon::prelude::*;

use reverie_core::optimize::{evaluate_candidate, CandidateEvaluator, EvalOutcome};
use reverie_core::sim::{SceneConfig, Trajectory};
use reverie_core::supervision::{CostWeights, SupervisionBundle};

pub struct ParallelEvaluator;

impl CandidateEvaluator for ParallelEvaluator {
    fn evaluate_batch(
        &self,
        scene: &SceneConfig,
        bundle: &SupervisionBundle,
        weights: &CostWeights,
        candidates: &[Trajectory],
    ) -> Vec<EvalOutcome> {
        candidates
            .par_iter()
            .map(|t| evaluate_candidate(scene, bundle, weights, t))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use glam::DVec3;
    use reverie_core::geometry::{CameraModel, ObjectId, PointCloud, Pose6D, SegMask, TriMesh};
    use reverie_core::optimize::SerialEvaluator;
    use reverie_core::perception::{AffordanceRegion, ContactSchedule};
    use reverie_core::sim::{ObjectSpec, TrajectoryMotion};

    #[test]
    fn parallel_matches_serial_bitwise() {
        let cam = CameraModel::look_at(
            200.0,
            200.0,
            64.0,
            64.0,
            DVec3::new(0.0, -0.5, 0.4),
            DVec3::new(0.0, 0.0, 0.03),
            DVec3::Z,
            128,
            128,
        )
        .unwrap();
        let cube = || TriMesh::box_mesh(DVec3::splat(0.025));
        let scene = SceneConfig::new(
            vec![
                ObjectSpec::rigid(
                    ObjectId(1),
                    "a",
                    cube(),
                    Pose6D::from_translation(DVec3::new(-0.08, 0.0, 0.025)),
                )
                .as_actuator(),
                ObjectSpec::rigid(
                    ObjectId(2),
                    "t",
                    cube(),
                    Pose6D::from_translation(DVec3::new(0.0, 0.0, 0.025)),
                )
                .as_target(),
                ObjectSpec::rigid(
                    ObjectId(9),
                    "desk",
                    TriMesh::box_mesh(DVec3::new(0.4, 0.4, 0.02)),
                    Pose6D::from_translation(DVec3::new(0.0, 0.0, -0.02)),
                )
                .as_background(),
            ],
            cam,
            DVec3::new(0.0, 0.0, -9.8),
            0.01,
            0.005,
        )
        .unwrap();
        let kfs = vec![0usize, 1, 2];
        let masks: Vec<SegMask> = kfs.iter().map(|_| SegMask::new_background(128, 128)).collect();
        let bundle = SupervisionBundle {
            keyframes: kfs.clone(),
            actuator: ObjectId(1),
            target: ObjectId(2),
            actuator_masks: masks,
            target_final_mask: SegMask::new_background(128, 128),
            actuator_final_cloud: PointCloud::new(vec![DVec3::ZERO]),
            target_final_cloud: PointCloud::new(vec![DVec3::ZERO]),
            contacts: ContactSchedule::empty(kfs),
            affordance: AffordanceRegion::default(),
        };
        let weights = CostWeights::default();
        let mut candidates = Vec::new();
        for k in 0..6 {
            let dx = 0.02 * k as f64;
            candidates.push(
                Trajectory::new(
                    TrajectoryMotion::Rigid(vec![
                        Pose6D::from_translation(DVec3::new(-0.08 + dx, 0.0, 0.025)),
                        Pose6D::from_translation(DVec3::new(-0.04 + dx, 0.0, 0.025)),
                        Pose6D::from_translation(DVec3::new(0.0 + dx, 0.01, 0.025)),
                    ]),
                    0.4,
                )
                .unwrap(),
            );
        }
        let serial = SerialEvaluator.evaluate_batch(&scene, &bundle, &weights, &candidates);
        let parallel = ParallelEvaluator.evaluate_batch(&scene, &bundle, &weights, &candidates);
        assert_eq!(serial.len(), parallel.len());
        for (s, p) in serial.iter().zip(&parallel) {
            match (s, p) {
                (EvalOutcome::Scored(a), EvalOutcome::Scored(b)) => {
                    assert_eq!(a.total.to_bits(), b.total.to_bits());
                    assert_eq!(a.act_iou.to_bits(), b.act_iou.to_bits());
                    assert_eq!(a.tar_cd.to_bits(), b.tar_cd.to_bits());
                }
                (a, b) => assert_eq!(a, b),
            }
        }
    }
}
