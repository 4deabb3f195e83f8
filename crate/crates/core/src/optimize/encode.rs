//! Search-vector parameterization of trajectories: increments about the
//! initialization, so the zero vector decodes back to it. Rigid waypoints use
//! 3 position + 3 axis-angle coordinates, constrained actuators 1 coordinate
//! per waypoint, particle actuators 3 velocity coordinates per segment.

use alloc::vec::Vec;

use glam::DVec3;

use thiserror::Error;

use crate::sim::{Trajectory, TrajectoryMotion};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EncodeError {
    #[error("trajectory kind differs from the initialization")]
    KindMismatch,
    #[error("waypoint count {got} differs from the initialization {expected}")]
    CountMismatch { expected: usize, got: usize },
    #[error("vector length {got} does not match dimension {expected}")]
    BadDimension { expected: usize, got: usize },
}

/// Search-space dimensionality for a trajectory shaped like `init`.
pub fn dimension(init: &Trajectory) -> usize {
    match &init.motion {
        TrajectoryMotion::Rigid(w) => 6 * w.len(),
        TrajectoryMotion::Scalar(w) => w.len(),
        TrajectoryMotion::ParticleVelocity(w) => 3 * w.len(),
    }
}

pub fn encode(traj: &Trajectory, init: &Trajectory) -> Result<Vec<f64>, EncodeError> {
    let mut out = Vec::with_capacity(dimension(init));
    match (&traj.motion, &init.motion) {
        (TrajectoryMotion::Rigid(w), TrajectoryMotion::Rigid(w0)) => {
            if w.len() != w0.len() {
                return Err(EncodeError::CountMismatch {
                    expected: w0.len(),
                    got: w.len(),
                });
            }
            for (p, p0) in w.iter().zip(w0) {
                let dp = p.position - p0.position;
                let dr = p0.rotation_to(p);
                out.extend_from_slice(&[dp.x, dp.y, dp.z, dr.x, dr.y, dr.z]);
            }
        }
        (TrajectoryMotion::Scalar(w), TrajectoryMotion::Scalar(w0)) => {
            if w.len() != w0.len() {
                return Err(EncodeError::CountMismatch {
                    expected: w0.len(),
                    got: w.len(),
                });
            }
            out.extend(w.iter().zip(w0).map(|(q, q0)| q - q0));
        }
        (TrajectoryMotion::ParticleVelocity(w), TrajectoryMotion::ParticleVelocity(w0)) => {
            if w.len() != w0.len() {
                return Err(EncodeError::CountMismatch {
                    expected: w0.len(),
                    got: w.len(),
                });
            }
            for (v, v0) in w.iter().zip(w0) {
                let dv = *v - *v0;
                out.extend_from_slice(&[dv.x, dv.y, dv.z]);
            }
        }
        _ => return Err(EncodeError::KindMismatch),
    }
    Ok(out)
}

pub fn decode(vector: &[f64], init: &Trajectory) -> Result<Trajectory, EncodeError> {
    let dim = dimension(init);
    if vector.len() != dim {
        return Err(EncodeError::BadDimension {
            expected: dim,
            got: vector.len(),
        });
    }
    let motion = match &init.motion {
        TrajectoryMotion::Rigid(w0) => TrajectoryMotion::Rigid(
            w0.iter()
                .enumerate()
                .map(|(k, p0)| {
                    let c = &vector[6 * k..6 * k + 6];
                    p0.with_increment(
                        DVec3::new(c[0], c[1], c[2]),
                        DVec3::new(c[3], c[4], c[5]),
                    )
                })
                .collect(),
        ),
        TrajectoryMotion::Scalar(w0) => TrajectoryMotion::Scalar(
            w0.iter().enumerate().map(|(k, q0)| q0 + vector[k]).collect(),
        ),
        TrajectoryMotion::ParticleVelocity(w0) => TrajectoryMotion::ParticleVelocity(
            w0.iter()
                .enumerate()
                .map(|(k, v0)| {
                    *v0 + DVec3::new(vector[3 * k], vector[3 * k + 1], vector[3 * k + 2])
                })
                .collect(),
        ),
    };
    Ok(Trajectory {
        motion,
        segment_duration: init.segment_duration,
    })
}

/// Per-coordinate initial standard deviations matching the encoding layout.
pub fn coordinate_scales(
    init: &Trajectory,
    sigma_pos: f64,
    sigma_rot: f64,
    sigma_vel: f64,
) -> Vec<f64> {
    match &init.motion {
        TrajectoryMotion::Rigid(w) => {
            let mut s = Vec::with_capacity(6 * w.len());
            for _ in 0..w.len() {
                s.extend_from_slice(&[
                    sigma_pos, sigma_pos, sigma_pos, sigma_rot, sigma_rot, sigma_rot,
                ]);
            }
            s
        }
        // a constrained DOF is either meters or radians; use the larger of
        // the two spreads so both hinge and prismatic actuators explore
        TrajectoryMotion::Scalar(w) => alloc::vec![sigma_pos.max(sigma_rot); w.len()],
        TrajectoryMotion::ParticleVelocity(w) => alloc::vec![sigma_vel; 3 * w.len()],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Pose6D;
    use crate::rng::Rng;
    use glam::DQuat;

    fn random_rigid(rng: &mut Rng, n: usize) -> Trajectory {
        let wps = (0..n)
            .map(|_| {
                let axis =
                    DVec3::new(rng.gauss(), rng.gauss(), rng.gauss()).normalize();
                Pose6D::new(
                    DVec3::new(rng.gauss(), rng.gauss(), rng.gauss()) * 0.1,
                    DQuat::from_axis_angle(axis, rng.uniform_in(-2.0, 2.0)),
                )
            })
            .collect();
        Trajectory::new(TrajectoryMotion::Rigid(wps), 0.5).unwrap()
    }

    #[test]
    fn eight_rigid_waypoints_give_dimension_48() {
        let mut rng = Rng::seed_from(1);
        let t = random_rigid(&mut rng, 8);
        assert_eq!(dimension(&t), 48);
    }

    #[test]
    fn zero_vector_decodes_to_init() {
        let mut rng = Rng::seed_from(2);
        let init = random_rigid(&mut rng, 5);
        let zero = alloc::vec![0.0; dimension(&init)];
        let decoded = decode(&zero, &init).unwrap();
        assert_eq!(decoded, init);
    }

    #[test]
    fn roundtrip_is_identity_within_1e9() {
        let mut rng = Rng::seed_from(3);
        for _ in 0..50 {
            let init = random_rigid(&mut rng, 4);
            let traj = random_rigid(&mut rng, 4);
            let vec = encode(&traj, &init).unwrap();
            let back = decode(&vec, &init).unwrap();
            match (&back.motion, &traj.motion) {
                (TrajectoryMotion::Rigid(a), TrajectoryMotion::Rigid(b)) => {
                    for (pa, pb) in a.iter().zip(b) {
                        assert!((pa.position - pb.position).length() < 1e-9);
                        assert!(pa.rotation_to(pb).length() < 1e-9);
                    }
                }
                _ => unreachable!(),
            }
        }
    }

    #[test]
    fn scalar_and_velocity_roundtrips() {
        let init = Trajectory::new(TrajectoryMotion::Scalar(alloc::vec![0.1, 0.5, 0.9]), 0.5)
            .unwrap();
        let traj = Trajectory::new(TrajectoryMotion::Scalar(alloc::vec![0.2, 0.4, 1.4]), 0.5)
            .unwrap();
        let v = encode(&traj, &init).unwrap();
        assert_eq!(v.len(), 3);
        assert_eq!(decode(&v, &init).unwrap(), traj);

        let init = Trajectory::new(
            TrajectoryMotion::ParticleVelocity(alloc::vec![DVec3::X, DVec3::Y]),
            0.5,
        )
        .unwrap();
        let traj = Trajectory::new(
            TrajectoryMotion::ParticleVelocity(alloc::vec![DVec3::Z, DVec3::X * 2.0]),
            0.5,
        )
        .unwrap();
        let v = encode(&traj, &init).unwrap();
        assert_eq!(v.len(), 6);
        assert_eq!(decode(&v, &init).unwrap(), traj);
    }

    #[test]
    fn mismatches_are_errors() {
        let mut rng = Rng::seed_from(4);
        let a = random_rigid(&mut rng, 4);
        let b = random_rigid(&mut rng, 5);
        assert!(matches!(
            encode(&a, &b),
            Err(EncodeError::CountMismatch { .. })
        ));
        let s = Trajectory::new(TrajectoryMotion::Scalar(alloc::vec![0.0, 1.0]), 0.5).unwrap();
        assert!(matches!(encode(&a, &s), Err(EncodeError::KindMismatch)));
        assert!(matches!(
            decode(&[0.0; 3], &a),
            Err(EncodeError::BadDimension { .. })
        ));
    }

    #[test]
    fn scales_follow_layout() {
        let mut rng = Rng::seed_from(5);
        let t = random_rigid(&mut rng, 2);
        let s = coordinate_scales(&t, 0.02, 0.087, 0.05);
        assert_eq!(s, alloc::vec![0.02, 0.02, 0.02, 0.087, 0.087, 0.087, 0.02, 0.02, 0.02, 0.087, 0.087, 0.087]);
    }
}
