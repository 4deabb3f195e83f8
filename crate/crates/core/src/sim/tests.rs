use glam::{DQuat, DVec3};

use crate::geometry::{CameraModel, ObjectId, Pose6D, TriMesh};

use super::*;

const ACTUATOR: ObjectId = ObjectId(1);
const TARGET: ObjectId = ObjectId(2);
const DESK: ObjectId = ObjectId(10);
const WALL: ObjectId = ObjectId(11);

fn test_camera() -> CameraModel {
    CameraModel::look_at(
        220.0,
        220.0,
        128.0,
        128.0,
        DVec3::new(0.0, -0.7, 0.55),
        DVec3::new(0.0, 0.0, 0.05),
        DVec3::Z,
        256,
        256,
    )
    .unwrap()
}

fn desk_object() -> ObjectSpec {
    ObjectSpec::rigid(
        DESK,
        "desk",
        TriMesh::box_mesh(DVec3::new(0.5, 0.5, 0.02)),
        Pose6D::from_translation(DVec3::new(0.0, 0.0, -0.02)),
    )
    .as_background()
}

/// Scene: actuated cube + passive target cube resting on a desk plane.
fn push_scene(gravity: DVec3) -> SceneConfig {
    let cube = || TriMesh::box_mesh(DVec3::splat(0.03));
    SceneConfig::new(
        alloc::vec![
            ObjectSpec::rigid(
                ACTUATOR,
                "pusher",
                cube(),
                Pose6D::from_translation(DVec3::new(-0.15, 0.0, 0.03)),
            )
            .as_actuator(),
            ObjectSpec::rigid(
                TARGET,
                "box",
                cube(),
                Pose6D::from_translation(DVec3::new(0.0, 0.0, 0.03)),
            )
            .as_target(),
            desk_object(),
        ],
        test_camera(),
        gravity,
        0.01,
        0.005,
    )
    .unwrap()
}

#[test]
fn holding_current_pose_is_a_fixed_point() {
    let scene = push_scene(DVec3::ZERO);
    let state = SimState::initial(&scene);
    let pose = state.pose_of(0).unwrap();
    let next = step(&scene, &state, &ActuatorCommand::RigidTarget(pose)).unwrap();
    let moved = next.pose_of(0).unwrap();
    assert!((moved.position - pose.position).length() < 1e-9);
    let target_pose = next.pose_of(1).unwrap();
    assert!((target_pose.position - DVec3::new(0.0, 0.0, 0.03)).length() < 1e-9);
}

#[test]
fn falling_particle_matches_discrete_ballistic_oracle_then_rests() {
    // One free grain 1 m above the desk plane under g = -9.8 z.
    let radius = 0.01;
    let blob = ParticleBlob::new(
        alloc::vec![DVec3::ZERO],
        radius,
        BlobBehavior::FreeGranular,
        alloc::vec![],
    )
    .unwrap();
    let scene = SceneConfig::new(
        alloc::vec![
            ObjectSpec::rigid(
                ACTUATOR,
                "idle",
                TriMesh::box_mesh(DVec3::splat(0.02)),
                Pose6D::from_translation(DVec3::new(0.4, 0.4, 0.02)),
            )
            .as_actuator(),
            ObjectSpec::blob(
                TARGET,
                "grain",
                blob,
                Pose6D::from_translation(DVec3::new(0.0, 0.0, 1.0)),
            )
            .as_target(),
            desk_object(),
        ],
        test_camera(),
        DVec3::new(0.0, 0.0, -9.8),
        0.01,
        0.005,
    )
    .unwrap();
    let hold = ActuatorCommand::RigidTarget(Pose6D::from_translation(DVec3::new(0.4, 0.4, 0.02)));
    let mut state = SimState::initial(&scene);
    let dt = scene.timestep;
    let g = 9.8;
    for n in 1..=100 {
        state = step(&scene, &state, &hold).unwrap();
        let z = state.particles_of(1).unwrap()[0].z;
        // semi-implicit Euler closed form: z_n = z0 - g dt^2 n(n+1)/2
        let predicted = 1.0 - g * dt * dt * (n as f64) * (n as f64 + 1.0) / 2.0;
        if predicted > radius + 0.02 {
            assert!((z - predicted).abs() < 1e-9, "step {n}: {z} vs {predicted}");
        }
    }
    // settle for another second and require rest on the surface
    for _ in 0..100 {
        state = step(&scene, &state, &hold).unwrap();
    }
    let p = state.particles_of(1).unwrap()[0];
    let v = match &state.bodies[1] {
        BodyState::Particles { velocities, .. } => velocities[0],
        _ => unreachable!(),
    };
    assert!(
        (p.z - radius).abs() < scene.contact_epsilon,
        "rest height {} vs radius {radius}",
        p.z
    );
    assert!(v.length() < 0.05, "residual speed {}", v.length());
}

#[test]
fn pd_reaches_waypoint_within_time_bound() {
    // straight-line motion long enough that the cruise phase dominates the
    // constant settling tail of the critically damped controller
    let scene = push_scene(DVec3::ZERO);
    let start = scene.actuator().initial_pose.position;
    let goal = Pose6D::from_translation(start + DVec3::new(2.0, 0.0, 0.0));
    let dist = 2.0;
    let budget = (dist / MAX_LIN_SPEED) * 1.5;
    let steps = libm::ceil(budget / scene.timestep) as usize;
    let mut state = SimState::initial(&scene);
    for _ in 0..steps {
        state = step(&scene, &state, &ActuatorCommand::RigidTarget(goal)).unwrap();
    }
    let pose = state.pose_of(0).unwrap();
    assert!(
        (pose.position - goal.position).length() < 1e-3,
        "missed waypoint by {}",
        (pose.position - goal.position).length()
    );
}

#[test]
fn identity_trajectory_leaves_scene_unchanged() {
    let scene = push_scene(DVec3::ZERO);
    let initial = scene.actuator().initial_pose;
    let traj = Trajectory::new(
        TrajectoryMotion::Rigid(alloc::vec![initial; 4]),
        0.5,
    )
    .unwrap();
    let record = rollout(&scene, &traj, &[0, 1, 2, 3]).unwrap();
    let start = SimState::initial(&scene);
    for s in &record.samples {
        for (b0, b1) in start.bodies.iter().zip(&s.state.bodies) {
            if let (BodyState::Rigid { pose: p0, .. }, BodyState::Rigid { pose: p1, .. }) =
                (b0, b1)
            {
                assert!((p0.position - p1.position).length() < 1e-9);
            }
        }
    }
}

#[test]
fn scripted_push_displaces_passive_box() {
    let scene = push_scene(DVec3::new(0.0, 0.0, -9.8));
    let start = scene.actuator().initial_pose;
    let mut kfs = alloc::vec::Vec::new();
    for i in 0..6 {
        let x = -0.15 + 0.05 * (i as f64 + 1.0);
        kfs.push(Pose6D::from_translation(DVec3::new(x, 0.0, 0.03)));
    }
    let _ = start;
    let traj = Trajectory::new(TrajectoryMotion::Rigid(kfs), 0.5).unwrap();
    let record = rollout(&scene, &traj, &[5]).unwrap();
    let final_box = record.final_state.pose_of(1).unwrap();
    assert!(
        final_box.position.x > scene.contact_epsilon,
        "box displaced {} along push direction",
        final_box.position.x
    );
}

#[test]
fn rollouts_are_bitwise_deterministic() {
    let scene = push_scene(DVec3::new(0.0, 0.0, -9.8));
    let traj = Trajectory::new(
        TrajectoryMotion::Rigid(alloc::vec![
            Pose6D::from_translation(DVec3::new(-0.05, 0.0, 0.03)),
            Pose6D::from_translation(DVec3::new(0.05, 0.01, 0.03)),
            Pose6D::from_translation(DVec3::new(0.10, -0.01, 0.04)),
        ]),
        0.5,
    )
    .unwrap();
    let a = rollout(&scene, &traj, &[0, 1, 2]).unwrap();
    let b = rollout(&scene, &traj, &[0, 1, 2]).unwrap();
    assert_eq!(a.final_state, b.final_state);
    for (sa, sb) in a.samples.iter().zip(&b.samples) {
        assert_eq!(sa.state, sb.state);
        assert_eq!(sa.obs.depth, sb.obs.depth);
        assert_eq!(sa.obs.seg, sb.obs.seg);
    }
}

#[test]
fn contact_matrix_cases_with_brute_force_oracle() {
    let cube = || TriMesh::box_mesh(DVec3::splat(0.5));
    let scene_at = |x: f64| {
        SceneConfig::new(
            alloc::vec![
                ObjectSpec::rigid(ACTUATOR, "a", cube(), Pose6D::IDENTITY).as_actuator(),
                ObjectSpec::rigid(
                    TARGET,
                    "b",
                    cube(),
                    Pose6D::from_translation(DVec3::new(x, 0.0, 0.0)),
                )
                .as_target(),
            ],
            test_camera(),
            DVec3::ZERO,
            0.01,
            0.01,
        )
        .unwrap()
    };
    // brute-force oracle: min vertex-pair distance for axis-aligned twins
    let brute = |x: f64| -> f64 {
        let a = TriMesh::box_mesh(DVec3::splat(0.5));
        let mut best = f64::INFINITY;
        for va in a.vertices() {
            for vb in a.vertices() {
                let d = (*va + DVec3::new(x, 0.0, 0.0) - *vb).length();
                if d < best {
                    best = d;
                }
            }
        }
        best
    };

    // 1 m apart: not in contact
    let scene = scene_at(2.0);
    let m = contacts(&SimState::initial(&scene), &scene);
    assert_eq!(m.get(ACTUATOR, TARGET), Some(false));
    assert!((brute(2.0) - 1.0).abs() < 1e-12);

    // overlapping: in contact
    let scene = scene_at(0.5);
    let m = contacts(&SimState::initial(&scene), &scene);
    assert_eq!(m.get(ACTUATOR, TARGET), Some(true));

    // face gap 0.005 < epsilon 0.01: in contact, matching the oracle
    let scene = scene_at(1.005);
    let m = contacts(&SimState::initial(&scene), &scene);
    assert_eq!(m.get(ACTUATOR, TARGET), Some(true));
    assert!((brute(1.005) - 0.005).abs() < 1e-12);

    // self-pair excluded
    assert_eq!(m.get(TARGET, TARGET), None);
}

#[test]
fn contact_matrix_is_symmetric() {
    let cube = || TriMesh::box_mesh(DVec3::splat(0.04));
    let scene = SceneConfig::new(
        alloc::vec![
            ObjectSpec::rigid(ACTUATOR, "a", cube(), Pose6D::IDENTITY)
                .as_actuator()
                .as_target(),
            ObjectSpec::rigid(
                TARGET,
                "b",
                cube(),
                Pose6D::from_translation(DVec3::new(0.085, 0.0, 0.0)),
            )
            .as_target(),
        ],
        test_camera(),
        DVec3::ZERO,
        0.01,
        0.01,
    )
    .unwrap();
    let m = contacts(&SimState::initial(&scene), &scene);
    assert_eq!(m.get(ACTUATOR, TARGET), m.get(TARGET, ACTUATOR));
}

#[test]
fn no_tunneling_through_thick_wall() {
    // passive box launched at 1 m/s toward a 0.1 m wall; and a pushed variant
    let cube = || TriMesh::box_mesh(DVec3::splat(0.02));
    let wall_x = 0.2;
    let scene = SceneConfig::new(
        alloc::vec![
            ObjectSpec::rigid(
                ACTUATOR,
                "pusher",
                cube(),
                Pose6D::from_translation(DVec3::new(-0.1, 0.0, 0.02)),
            )
            .as_actuator(),
            ObjectSpec::rigid(
                TARGET,
                "box",
                cube(),
                Pose6D::from_translation(DVec3::new(0.0, 0.0, 0.02)),
            )
            .as_target(),
            desk_object(),
            ObjectSpec::rigid(
                WALL,
                "wall",
                TriMesh::box_mesh(DVec3::new(0.05, 0.3, 0.1)),
                Pose6D::from_translation(DVec3::new(wall_x + 0.05, 0.0, 0.1)),
            )
            .as_background(),
        ],
        test_camera(),
        DVec3::new(0.0, 0.0, -9.8),
        0.01,
        0.005,
    )
    .unwrap();
    // variant 1: free flight at the wall
    let mut state = SimState::initial(&scene);
    if let BodyState::Rigid { linvel, .. } = &mut state.bodies[1] {
        *linvel = DVec3::new(1.0, 0.0, 0.0);
    }
    let hold = ActuatorCommand::RigidTarget(scene.actuator().initial_pose);
    for _ in 0..200 {
        state = step(&scene, &state, &hold).unwrap();
    }
    let box_pose = state.pose_of(1).unwrap();
    let wall_far = wall_x + 0.1;
    assert!(
        box_pose.position.x - 0.02 < wall_far,
        "box passed through the wall: x = {}",
        box_pose.position.x
    );
    // variant 2: actuator presses the box against the wall for 2 s
    let traj = Trajectory::new(
        TrajectoryMotion::Rigid(alloc::vec![
            Pose6D::from_translation(DVec3::new(0.1, 0.0, 0.02)),
            Pose6D::from_translation(DVec3::new(0.16, 0.0, 0.02)),
            Pose6D::from_translation(DVec3::new(0.16, 0.0, 0.02)),
            Pose6D::from_translation(DVec3::new(0.16, 0.0, 0.02)),
        ]),
        0.5,
    )
    .unwrap();
    let record = rollout(&scene, &traj, &[3]).unwrap();
    let box_pose = record.final_state.pose_of(1).unwrap();
    assert!(
        box_pose.position.x - 0.02 < wall_far,
        "pressed box passed through the wall: x = {}",
        box_pose.position.x
    );
}

#[test]
fn kinetic_energy_non_increasing_without_actuation_or_gravity() {
    let cube = || TriMesh::box_mesh(DVec3::splat(0.03));
    let scene = SceneConfig::new(
        alloc::vec![
            ObjectSpec::rigid(
                ACTUATOR,
                "anchor",
                cube(),
                Pose6D::from_translation(DVec3::new(0.0, 0.0, 0.03)),
            )
            .as_actuator(),
            ObjectSpec::rigid(
                TARGET,
                "flyer",
                cube(),
                Pose6D::from_translation(DVec3::new(-0.2, 0.0, 0.03)),
            )
            .as_target(),
            ObjectSpec::rigid(
                ObjectId(3),
                "drifter",
                cube(),
                Pose6D::from_translation(DVec3::new(0.2, 0.05, 0.03)),
            ),
            desk_object(),
        ],
        test_camera(),
        DVec3::ZERO,
        0.01,
        0.005,
    )
    .unwrap();
    let mut state = SimState::initial(&scene);
    if let BodyState::Rigid { linvel, angvel, .. } = &mut state.bodies[1] {
        *linvel = DVec3::new(0.8, 0.0, 0.0);
        *angvel = DVec3::new(0.0, 2.0, 1.0);
    }
    if let BodyState::Rigid { linvel, .. } = &mut state.bodies[2] {
        *linvel = DVec3::new(-0.5, -0.1, 0.0);
    }
    let hold = ActuatorCommand::RigidTarget(scene.actuator().initial_pose);
    let mut prev = state.kinetic_energy(&scene);
    for _ in 0..300 {
        state = step(&scene, &state, &hold).unwrap();
        let now = state.kinetic_energy(&scene);
        assert!(
            now <= prev + 1e-12,
            "kinetic energy rose from {prev} to {now}"
        );
        prev = now;
    }
}

#[test]
fn kinematic_mode_hits_waypoints_exactly() {
    let scene = push_scene(DVec3::ZERO);
    let wps = alloc::vec![
        Pose6D::from_translation(DVec3::new(-0.10, 0.02, 0.05)),
        Pose6D::new(
            DVec3::new(-0.05, -0.02, 0.06),
            DQuat::from_axis_angle(DVec3::Z, 0.3),
        ),
    ];
    let traj = Trajectory::new(TrajectoryMotion::Rigid(wps.clone()), 0.5).unwrap();
    let record =
        rollout_with_mode(&scene, &traj, &[0, 1], ActuationMode::KinematicInterp, false).unwrap();
    for (s, wp) in record.samples.iter().zip(&wps) {
        let pose = s.state.pose_of(0).unwrap();
        assert!((pose.position - wp.position).length() < 1e-9);
        assert!(pose.rotation_to(wp).length() < 1e-9);
    }
}

#[test]
fn hinge_actuator_tracks_scalar_waypoints() {
    let door_mesh = TriMesh::box_mesh(DVec3::new(0.05, 0.005, 0.07));
    let hinge = MotionConstraint::Hinge {
        pivot: DVec3::new(-0.05, 0.0, 0.07),
        axis: DVec3::Z,
    };
    let scene = SceneConfig::new(
        alloc::vec![
            ObjectSpec::rigid(
                ACTUATOR,
                "door",
                door_mesh,
                Pose6D::from_translation(DVec3::new(0.0, 0.0, 0.07)),
            )
            .as_actuator()
            .as_target()
            .with_constraint(hinge),
            desk_object(),
        ],
        test_camera(),
        DVec3::new(0.0, 0.0, -9.8),
        0.01,
        0.005,
    )
    .unwrap();
    let angle = 1.2;
    let traj = Trajectory::new(
        TrajectoryMotion::Scalar(alloc::vec![0.3, 0.7, angle, angle]),
        0.5,
    )
    .unwrap();
    let record = rollout(&scene, &traj, &[3]).unwrap();
    let got = record.final_state.scalar_of(0).unwrap();
    assert!((got - angle).abs() < 0.02, "hinge angle {got}");
    // pose must stay on the hinge circle
    let pose = record.final_state.pose_of(0).unwrap();
    let r0 = (scene.objects[0].initial_pose.position - DVec3::new(-0.05, 0.0, 0.07)).length();
    let r1 = (pose.position - DVec3::new(-0.05, 0.0, 0.07)).length();
    assert!((r0 - r1).abs() < 1e-9);
}

#[test]
fn prismatic_body_sticks_until_struck() {
    // peg under gravity holds position thanks to dry friction, then a
    // hammer blow drives it down
    let peg_mesh = TriMesh::box_mesh(DVec3::new(0.01, 0.01, 0.05));
    let hammer_mesh = TriMesh::box_mesh(DVec3::new(0.03, 0.03, 0.02));
    let scene = SceneConfig::new(
        alloc::vec![
            ObjectSpec::rigid(
                ACTUATOR,
                "hammer",
                hammer_mesh,
                Pose6D::from_translation(DVec3::new(0.0, 0.0, 0.30)),
            )
            .as_actuator(),
            ObjectSpec::rigid(
                TARGET,
                "peg",
                peg_mesh,
                Pose6D::from_translation(DVec3::new(0.0, 0.0, 0.05)),
            )
            .as_target()
            .with_constraint(MotionConstraint::Prismatic {
                axis: DVec3::Z,
                friction_accel: 20.0,
            })
            // seated in its fixture: the desk is not a collision partner
            .without_background_collision(),
            desk_object(),
        ],
        test_camera(),
        DVec3::new(0.0, 0.0, -9.8),
        0.01,
        0.005,
    )
    .unwrap();
    // phase 1: hold hammer away, peg must not creep
    let hold = ActuatorCommand::RigidTarget(scene.actuator().initial_pose);
    let mut state = SimState::initial(&scene);
    for _ in 0..100 {
        state = step(&scene, &state, &hold).unwrap();
    }
    assert!(state.scalar_of(1).unwrap().abs() < 1e-6, "peg crept");
    // phase 2: strike downward
    let strike = ActuatorCommand::RigidTarget(Pose6D::from_translation(DVec3::new(
        0.0, 0.0, 0.08,
    )));
    for _ in 0..100 {
        state = step(&scene, &state, &strike).unwrap();
    }
    let q = state.scalar_of(1).unwrap();
    assert!(q < -0.005, "peg not driven: q = {q}");
}

#[test]
fn cohesive_blob_holds_shape_under_gravity() {
    let particles = rollout::ring_blob_particles(24, 0.03);
    let blob = ParticleBlob::new(
        particles,
        0.004,
        BlobBehavior::CohesiveElastic,
        alloc::vec![0, 12],
    )
    .unwrap();
    assert!(!blob.links().is_empty());
    let scene = SceneConfig::new(
        alloc::vec![
            ObjectSpec::blob(
                ACTUATOR,
                "band",
                blob,
                Pose6D::from_translation(DVec3::new(0.0, 0.0, 0.1)),
            )
            .as_actuator()
            .as_target(),
            desk_object(),
        ],
        test_camera(),
        DVec3::new(0.0, 0.0, -9.8),
        0.01,
        0.005,
    )
    .unwrap();
    // carry the band down to the desk, then hold
    let traj = Trajectory::new(
        TrajectoryMotion::ParticleVelocity(alloc::vec![
            DVec3::new(0.0, 0.0, -0.18),
            DVec3::new(0.0, 0.0, -0.02),
            DVec3::ZERO,
        ]),
        0.5,
    )
    .unwrap();
    let record = rollout(&scene, &traj, &[2]).unwrap();
    let pts = record.final_state.particles_of(0).unwrap();
    // the ring reached the desk and kept its diameter within 50%
    let mut max_r = 0.0f64;
    let centroid = pts.iter().copied().sum::<DVec3>() / pts.len() as f64;
    for p in pts {
        max_r = max_r
            .max((DVec3::new(p.x, p.y, 0.0) - DVec3::new(centroid.x, centroid.y, 0.0)).length());
    }
    assert!(max_r > 0.015 && max_r < 0.045, "ring radius {max_r}");
    assert!(centroid.z < 0.02, "band did not settle: z = {}", centroid.z);
}

#[test]
fn diverged_state_reports_object_and_time() {
    let scene = push_scene(DVec3::ZERO);
    let mut state = SimState::initial(&scene);
    if let BodyState::Rigid { linvel, .. } = &mut state.bodies[1] {
        *linvel = DVec3::new(f64::NAN, 0.0, 0.0);
    }
    let hold = ActuatorCommand::RigidTarget(scene.actuator().initial_pose);
    let err = step(&scene, &state, &hold).unwrap_err();
    assert!(matches!(err, SimError::Diverged { object: TARGET, .. }));
}

#[test]
fn scene_validation_rejects_bad_configs() {
    let cube = || TriMesh::box_mesh(DVec3::splat(0.03));
    let cam = test_camera();
    // background actuator
    let err = SceneConfig::new(
        alloc::vec![ObjectSpec::rigid(ACTUATOR, "x", cube(), Pose6D::IDENTITY)
            .as_background()
            .as_actuator()],
        cam,
        DVec3::ZERO,
        0.01,
        0.005,
    )
    .unwrap_err();
    assert!(matches!(err, SimError::InvalidScene(_)));
    // no target
    let err = SceneConfig::new(
        alloc::vec![ObjectSpec::rigid(ACTUATOR, "x", cube(), Pose6D::IDENTITY).as_actuator()],
        cam,
        DVec3::ZERO,
        0.01,
        0.005,
    )
    .unwrap_err();
    assert!(matches!(err, SimError::InvalidScene(_)));
    // timestep out of range
    let err = SceneConfig::new(
        alloc::vec![
            ObjectSpec::rigid(ACTUATOR, "x", cube(), Pose6D::IDENTITY)
                .as_actuator()
                .as_target()
        ],
        cam,
        DVec3::ZERO,
        0.1,
        0.005,
    )
    .unwrap_err();
    assert!(matches!(err, SimError::InvalidScene(_)));
    // duplicate ids
    let err = SceneConfig::new(
        alloc::vec![
            ObjectSpec::rigid(ACTUATOR, "x", cube(), Pose6D::IDENTITY)
                .as_actuator()
                .as_target(),
            ObjectSpec::rigid(ACTUATOR, "y", cube(), Pose6D::IDENTITY),
        ],
        cam,
        DVec3::ZERO,
        0.01,
        0.005,
    )
    .unwrap_err();
    assert!(matches!(err, SimError::InvalidScene(_)));
}

#[test]
fn trajectory_kind_mismatch_is_rejected() {
    let scene = push_scene(DVec3::ZERO);
    let traj = Trajectory::new(TrajectoryMotion::Scalar(alloc::vec![0.0, 1.0]), 0.5).unwrap();
    assert!(matches!(
        rollout(&scene, &traj, &[0]),
        Err(SimError::InvalidTrajectory(_))
    ));
}
