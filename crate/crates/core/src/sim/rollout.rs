//! Trajectory execution: drive each waypoint for a fixed segment duration,
//! record rendered observations at requested waypoint indices.

use alloc::vec::Vec;

use glam::DVec3;

use crate::render::{rasterize, FrameObservation, RenderItem};

use super::dynamics::{step, step_kinematic, ImposedActuation};
use super::{
    BodyState, SceneConfig, Shape, SimError, SimState, Trajectory, TrajectoryMotion,
};

/// How the actuator follows its waypoints.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ActuationMode {
    /// Dynamic execution through the embedded PD controller (or direct
    /// particle velocities). This is what policies are scored on.
    PdController,
    /// Idealized motion: the actuated entity is interpolated exactly along
    /// its commands, ignoring dynamics, while passive objects still respond.
    /// Used to synthesize imagined demonstrations.
    KinematicInterp,
}

/// State and observation recorded after one waypoint segment.
#[derive(Clone, Debug)]
pub struct RolloutSample {
    pub waypoint: usize,
    pub state: SimState,
    pub obs: FrameObservation,
}

#[derive(Clone, Debug)]
pub struct RolloutRecord {
    pub samples: Vec<RolloutSample>,
    pub final_state: SimState,
}

/// Render the current state of every object through the scene camera.
pub fn render_state(
    scene: &SceneConfig,
    state: &SimState,
    with_color: bool,
    frame_index: usize,
) -> FrameObservation {
    let mut items: Vec<RenderItem<'_>> = Vec::with_capacity(scene.objects.len());
    for (spec, body) in scene.objects.iter().zip(&state.bodies) {
        match (&spec.shape, body) {
            (Shape::Mesh(mesh), BodyState::Rigid { pose, .. }) => items.push(RenderItem::Mesh {
                mesh,
                pose: *pose,
                id: spec.id,
            }),
            (Shape::Blob(blob), BodyState::Particles { positions, .. }) => {
                items.push(RenderItem::Points {
                    points: positions,
                    radius: blob.radius,
                    id: spec.id,
                })
            }
            _ => unreachable!("shape/state mismatch"),
        }
    }
    rasterize(&items, &scene.camera, with_color, frame_index)
}

/// Execute `traj` from the initial scene state, recording observations after
/// the waypoint segments listed in `record_at` (0-based, sorted).
pub fn rollout(
    scene: &SceneConfig,
    traj: &Trajectory,
    record_at: &[usize],
) -> Result<RolloutRecord, SimError> {
    rollout_with_mode(scene, traj, record_at, ActuationMode::PdController, false)
}

pub fn rollout_with_mode(
    scene: &SceneConfig,
    traj: &Trajectory,
    record_at: &[usize],
    mode: ActuationMode,
    with_color: bool,
) -> Result<RolloutRecord, SimError> {
    traj.validate()?;
    check_kind(scene, traj)?;
    debug_assert!(record_at.windows(2).all(|w| w[0] < w[1]));
    let steps_per_segment =
        libm::round(traj.segment_duration / scene.timestep).max(1.0) as usize;
    let dt = scene.timestep;
    let mut state = SimState::initial(scene);
    let mut samples = Vec::with_capacity(record_at.len());
    let actuator_index = scene.actuator_index();
    for wp in 0..traj.waypoint_count() {
        match mode {
            ActuationMode::PdController => {
                let command = traj.command_for_segment(wp);
                for _ in 0..steps_per_segment {
                    state = step(scene, &state, &command)?;
                }
            }
            ActuationMode::KinematicInterp => {
                let seg_start = segment_start(&state, scene, actuator_index);
                for k in 0..steps_per_segment {
                    let alpha = (k + 1) as f64 / steps_per_segment as f64;
                    let imposed = interpolate_command(traj, wp, &seg_start, alpha, dt);
                    state = step_kinematic(scene, &state, &imposed)?;
                }
            }
        }
        if record_at.contains(&wp) {
            let obs = render_state(scene, &state, with_color, wp);
            samples.push(RolloutSample {
                waypoint: wp,
                state: state.clone(),
                obs,
            });
        }
    }
    Ok(RolloutRecord {
        samples,
        final_state: state,
    })
}

/// Synthesize a demonstration video: idealized (kinematic) actuation with
/// dynamic passives, rendered every `steps_per_frame` steps. Returns one
/// (state, observation) per frame, including frame 0 (the initial scene),
/// so the frame count is `waypoints * frames_per_segment + 1`.
pub fn video_rollout(
    scene: &SceneConfig,
    traj: &Trajectory,
    frames_per_segment: usize,
    with_color: bool,
) -> Result<Vec<(SimState, FrameObservation)>, SimError> {
    traj.validate()?;
    check_kind(scene, traj)?;
    if frames_per_segment == 0 {
        return Err(SimError::InvalidTrajectory("frames_per_segment must be >= 1"));
    }
    let steps_per_segment =
        libm::round(traj.segment_duration / scene.timestep).max(1.0) as usize;
    let steps_per_frame = (steps_per_segment / frames_per_segment).max(1);
    let dt = scene.timestep;
    let actuator_index = scene.actuator_index();
    let mut state = SimState::initial(scene);
    let mut frames = Vec::with_capacity(traj.waypoint_count() * frames_per_segment + 1);
    frames.push((
        state.clone(),
        render_state(scene, &state, with_color, 0),
    ));
    let mut frame_index = 1;
    for wp in 0..traj.waypoint_count() {
        let seg_start = segment_start(&state, scene, actuator_index);
        for k in 0..steps_per_segment {
            let alpha = (k + 1) as f64 / steps_per_segment as f64;
            let imposed = interpolate_command(traj, wp, &seg_start, alpha, dt);
            state = step_kinematic(scene, &state, &imposed)?;
            let is_frame = (k + 1) % steps_per_frame == 0
                && frame_index <= (wp + 1) * frames_per_segment;
            if is_frame {
                frames.push((
                    state.clone(),
                    render_state(scene, &state, with_color, frame_index),
                ));
                frame_index += 1;
            }
        }
    }
    Ok(frames)
}

fn check_kind(scene: &SceneConfig, traj: &Trajectory) -> Result<(), SimError> {
    let actuator = scene.actuator();
    let ok = match (&actuator.shape, &traj.motion) {
        (Shape::Mesh(_), TrajectoryMotion::Rigid(_)) => matches!(
            actuator.constraint,
            super::MotionConstraint::Free
        ),
        (Shape::Mesh(_), TrajectoryMotion::Scalar(_)) => matches!(
            actuator.constraint,
            super::MotionConstraint::Hinge { .. } | super::MotionConstraint::Prismatic { .. }
        ),
        (Shape::Blob(_), TrajectoryMotion::ParticleVelocity(_)) => true,
        _ => false,
    };
    if ok {
        Ok(())
    } else {
        Err(SimError::InvalidTrajectory(
            "trajectory kind does not match the actuator",
        ))
    }
}

enum SegmentStart {
    Pose(crate::geometry::Pose6D),
    Scalar(f64),
    None,
}

fn segment_start(state: &SimState, scene: &SceneConfig, actuator_index: usize) -> SegmentStart {
    let spec = &scene.objects[actuator_index];
    match &state.bodies[actuator_index] {
        BodyState::Rigid { pose, scalar, .. } => match spec.constraint {
            super::MotionConstraint::Free => SegmentStart::Pose(*pose),
            _ => SegmentStart::Scalar(*scalar),
        },
        BodyState::Particles { .. } => SegmentStart::None,
    }
}

fn interpolate_command(
    traj: &Trajectory,
    wp: usize,
    seg_start: &SegmentStart,
    alpha: f64,
    _dt: f64,
) -> ImposedActuation {
    match (&traj.motion, seg_start) {
        (TrajectoryMotion::Rigid(wps), SegmentStart::Pose(start)) => {
            let target = wps[wp];
            let pos = start.position.lerp(target.position, alpha);
            let rot = start.orientation.slerp(target.orientation, alpha);
            ImposedActuation::Pose(crate::geometry::Pose6D::new(pos, rot))
        }
        (TrajectoryMotion::Scalar(wps), SegmentStart::Scalar(start)) => {
            ImposedActuation::Scalar(start + (wps[wp] - start) * alpha)
        }
        (TrajectoryMotion::ParticleVelocity(wps), _) => {
            ImposedActuation::ParticleVelocity(wps[wp])
        }
        _ => unreachable!("trajectory kind checked at rollout start"),
    }
}

/// Straight-line particle layouts used by desk tasks and tests.
pub fn grid_blob_particles(count: (usize, usize, usize), spacing: f64) -> Vec<DVec3> {
    let mut pts = Vec::with_capacity(count.0 * count.1 * count.2);
    let offset = DVec3::new(
        (count.0 as f64 - 1.0) * spacing / 2.0,
        (count.1 as f64 - 1.0) * spacing / 2.0,
        (count.2 as f64 - 1.0) * spacing / 2.0,
    );
    for k in 0..count.2 {
        for j in 0..count.1 {
            for i in 0..count.0 {
                pts.push(
                    DVec3::new(
                        i as f64 * spacing,
                        j as f64 * spacing,
                        k as f64 * spacing,
                    ) - offset,
                );
            }
        }
    }
    pts
}

/// Ring of particles in the xy-plane (rubber-band style blobs).
pub fn ring_blob_particles(count: usize, ring_radius: f64) -> Vec<DVec3> {
    (0..count)
        .map(|i| {
            let theta = core::f64::consts::TAU * i as f64 / count as f64;
            DVec3::new(
                ring_radius * libm::cos(theta),
                ring_radius * libm::sin(theta),
                0.0,
            )
        })
        .collect()
}
