//! Desk-scale simulator: an actuated object follows waypoint commands through
//! a PD controller (or direct particle velocities), passive rigid bodies and
//! particle blobs respond through penalty contacts.
//!
//! The engine exists to rank trajectories, not to reproduce research-grade
//! dynamics: contacts are inelastic velocity impulses plus positional
//! de-penetration, both purely dissipative, which keeps rollouts stable and
//! bitwise deterministic.

mod dynamics;
mod rollout;
#[cfg(test)]
mod tests;

pub use dynamics::{contacts, step};
pub use rollout::{
    grid_blob_particles, render_state, ring_blob_particles, rollout, rollout_with_mode,
    video_rollout, ActuationMode, RolloutRecord, RolloutSample,
};

use alloc::string::String;
use alloc::vec::Vec;

use glam::DVec3;
use thiserror::Error;

use crate::geometry::{CameraModel, GeometryError, ObjectId, Pose6D, TriMesh};

/// Proportional gain of the embedded waypoint controller (s^-2).
pub const PD_KP: f64 = 100.0;
/// Derivative gain, critically damped: 2 * sqrt(PD_KP).
pub const PD_KD: f64 = 20.0;
/// Actuator linear speed clamp (m/s).
pub const MAX_LIN_SPEED: f64 = 1.0;
/// Actuator angular speed clamp (rad/s).
pub const MAX_ANG_SPEED: f64 = core::f64::consts::PI;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("invalid trajectory: {0}")]
    InvalidTrajectory(&'static str),
    #[error("simulation diverged for object {object} at t={time}")]
    Diverged { object: ObjectId, time: f64 },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// How particles of a blob behave collectively.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BlobBehavior {
    /// Independent grains: gravity, surface contacts, Coulomb-style damping.
    FreeGranular,
    /// Grains connected by springs along their initial nearest-neighbor links.
    CohesiveElastic,
}

/// A deformable object represented as spheres of a common radius.
#[derive(Clone, Debug, PartialEq)]
pub struct ParticleBlob {
    pub particles: Vec<DVec3>,
    pub radius: f64,
    pub behavior: BlobBehavior,
    /// Particle indices driven directly by the trajectory (may be empty).
    pub actuated: Vec<u32>,
    /// Spring stiffness for cohesive links (acceleration per meter, s^-2).
    pub stiffness: f64,
    /// Spring damping along links (s^-1).
    pub damping: f64,
    links: Vec<(u32, u32, f64)>,
}

const COHESIVE_NEIGHBORS: usize = 3;

impl ParticleBlob {
    pub fn new(
        particles: Vec<DVec3>,
        radius: f64,
        behavior: BlobBehavior,
        actuated: Vec<u32>,
    ) -> Result<Self, SimError> {
        if particles.is_empty() {
            return Err(SimError::InvalidScene(
                "blob needs at least one particle".into(),
            ));
        }
        if radius <= 0.0 || radius.is_nan() {
            return Err(SimError::InvalidScene("blob radius must be positive".into()));
        }
        if let Some(i) = actuated.iter().find(|i| **i as usize >= particles.len()) {
            return Err(SimError::InvalidScene(alloc::format!(
                "actuated particle index {i} out of range"
            )));
        }
        let links = if behavior == BlobBehavior::CohesiveElastic {
            Self::build_links(&particles)
        } else {
            Vec::new()
        };
        Ok(ParticleBlob {
            particles,
            radius,
            behavior,
            actuated,
            stiffness: 2000.0,
            damping: 20.0,
            links,
        })
    }

    pub fn with_spring(mut self, stiffness: f64, damping: f64) -> Self {
        self.stiffness = stiffness;
        self.damping = damping;
        self
    }

    /// Initial nearest-neighbor links (i, j, rest length), i < j, deduplicated.
    fn build_links(particles: &[DVec3]) -> Vec<(u32, u32, f64)> {
        let n = particles.len();
        let mut links: Vec<(u32, u32, f64)> = Vec::new();
        for i in 0..n {
            let mut dists: Vec<(f64, usize)> = (0..n)
                .filter(|j| *j != i)
                .map(|j| ((particles[j] - particles[i]).length(), j))
                .collect();
            dists.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
            for (rest, j) in dists.into_iter().take(COHESIVE_NEIGHBORS) {
                let key = if i < j {
                    (i as u32, j as u32)
                } else {
                    (j as u32, i as u32)
                };
                if !links.iter().any(|(a, b, _)| (*a, *b) == key) {
                    links.push((key.0, key.1, rest));
                }
            }
        }
        links.sort_unstable_by_key(|l| (l.0, l.1));
        links
    }

    pub fn links(&self) -> &[(u32, u32, f64)] {
        &self.links
    }
}

/// Geometry of one scene object.
#[derive(Clone, Debug, PartialEq)]
pub enum Shape {
    Mesh(TriMesh),
    Blob(ParticleBlob),
}

/// Degrees of freedom allowed to a body.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum MotionConstraint {
    Free,
    /// Immovable regardless of role (used for posts and fixtures).
    Fixed,
    /// Rotation about a world axis through a pivot; the scalar DOF is the
    /// angle in radians.
    Hinge { pivot: DVec3, axis: DVec3 },
    /// Translation along a world axis; the scalar DOF is meters. Dry friction
    /// (a deceleration, m/s^2) makes the body hold position until struck.
    Prismatic { axis: DVec3, friction_accel: f64 },
}

/// One object of the scene: its shape, starting pose, role flags, and mass.
#[derive(Clone, Debug)]
pub struct ObjectSpec {
    pub id: ObjectId,
    pub name: String,
    pub shape: Shape,
    pub initial_pose: Pose6D,
    pub background: bool,
    pub actuator: bool,
    pub target: bool,
    pub mass: f64,
    pub constraint: MotionConstraint,
    /// Cleared for bodies seated in fixtures (a peg in its hole): they stop
    /// colliding with background geometry but still meet movable bodies.
    pub collide_background: bool,
}

/// Default rigid mass in kilograms.
pub const DEFAULT_RIGID_MASS: f64 = 0.1;

impl ObjectSpec {
    pub fn rigid(id: ObjectId, name: &str, mesh: TriMesh, initial_pose: Pose6D) -> Self {
        ObjectSpec {
            id,
            name: name.into(),
            shape: Shape::Mesh(mesh),
            initial_pose,
            background: false,
            actuator: false,
            target: false,
            mass: DEFAULT_RIGID_MASS,
            constraint: MotionConstraint::Free,
            collide_background: true,
        }
    }

    pub fn blob(id: ObjectId, name: &str, blob: ParticleBlob, initial_pose: Pose6D) -> Self {
        ObjectSpec {
            id,
            name: name.into(),
            shape: Shape::Blob(blob),
            initial_pose,
            background: false,
            actuator: false,
            target: false,
            mass: DEFAULT_RIGID_MASS,
            constraint: MotionConstraint::Free,
            collide_background: true,
        }
    }

    pub fn as_background(mut self) -> Self {
        self.background = true;
        self.constraint = MotionConstraint::Fixed;
        self
    }

    pub fn as_actuator(mut self) -> Self {
        self.actuator = true;
        self
    }

    pub fn as_target(mut self) -> Self {
        self.target = true;
        self
    }

    pub fn with_mass(mut self, mass: f64) -> Self {
        self.mass = mass;
        self
    }

    pub fn with_constraint(mut self, constraint: MotionConstraint) -> Self {
        self.constraint = constraint;
        self
    }

    pub fn without_background_collision(mut self) -> Self {
        self.collide_background = false;
        self
    }

    /// True if the body can move at all during simulation.
    pub fn is_movable(&self) -> bool {
        if self.background {
            return false;
        }
        !matches!(self.constraint, MotionConstraint::Fixed)
    }
}

/// Full scene description: objects, the fixed camera, and integration
/// parameters. Validated on construction.
#[derive(Clone, Debug)]
pub struct SceneConfig {
    pub objects: Vec<ObjectSpec>,
    pub camera: CameraModel,
    pub gravity: DVec3,
    pub timestep: f64,
    pub contact_epsilon: f64,
}

impl SceneConfig {
    pub fn new(
        objects: Vec<ObjectSpec>,
        camera: CameraModel,
        gravity: DVec3,
        timestep: f64,
        contact_epsilon: f64,
    ) -> Result<Self, SimError> {
        if !(0.0..=0.05).contains(&timestep) || timestep == 0.0 {
            return Err(SimError::InvalidScene(
                "timestep must lie in (0, 0.05]".into(),
            ));
        }
        if contact_epsilon <= 0.0 || contact_epsilon.is_nan() {
            return Err(SimError::InvalidScene(
                "contact_epsilon must be positive".into(),
            ));
        }
        let mut seen = Vec::new();
        for o in &objects {
            if o.id.is_background() {
                return Err(SimError::InvalidScene(alloc::format!(
                    "object '{}' uses the reserved background id 0",
                    o.name
                )));
            }
            if seen.contains(&o.id) {
                return Err(SimError::InvalidScene(alloc::format!(
                    "duplicate object id {}",
                    o.id
                )));
            }
            seen.push(o.id);
            if o.background && (o.actuator || o.target) {
                return Err(SimError::InvalidScene(alloc::format!(
                    "background object '{}' cannot be actuator or target",
                    o.name
                )));
            }
            if o.mass <= 0.0 || o.mass.is_nan() {
                return Err(SimError::InvalidScene(alloc::format!(
                    "object '{}' needs positive mass",
                    o.name
                )));
            }
            if o.actuator {
                if let Shape::Blob(b) = &o.shape {
                    if b.actuated.is_empty() {
                        return Err(SimError::InvalidScene(alloc::format!(
                            "blob actuator '{}' declares no actuated particles",
                            o.name
                        )));
                    }
                }
            }
        }
        if !objects.iter().any(|o| o.actuator) {
            return Err(SimError::InvalidScene("scene needs an actuator".into()));
        }
        if !objects.iter().any(|o| o.target) {
            return Err(SimError::InvalidScene("scene needs a target".into()));
        }
        Ok(SceneConfig {
            objects,
            camera,
            gravity,
            timestep,
            contact_epsilon,
        })
    }

    pub fn index_of(&self, id: ObjectId) -> Option<usize> {
        self.objects.iter().position(|o| o.id == id)
    }

    pub fn object(&self, id: ObjectId) -> Option<&ObjectSpec> {
        self.objects.iter().find(|o| o.id == id)
    }

    /// The driven object: the first actuator-flagged object.
    pub fn actuator_index(&self) -> usize {
        self.objects
            .iter()
            .position(|o| o.actuator)
            .expect("validated")
    }

    pub fn actuator(&self) -> &ObjectSpec {
        &self.objects[self.actuator_index()]
    }

    /// The first target-flagged object (the task's primary objective).
    pub fn target(&self) -> &ObjectSpec {
        self.objects.iter().find(|o| o.target).expect("validated")
    }

    pub fn foreground_ids(&self) -> Vec<ObjectId> {
        self.objects
            .iter()
            .filter(|o| !o.background)
            .map(|o| o.id)
            .collect()
    }

    pub fn target_ids(&self) -> Vec<ObjectId> {
        self.objects
            .iter()
            .filter(|o| o.target)
            .map(|o| o.id)
            .collect()
    }
}

/// Dynamic state of one body.
#[derive(Clone, Debug, PartialEq)]
pub enum BodyState {
    Rigid {
        pose: Pose6D,
        linvel: DVec3,
        angvel: DVec3,
        /// DOF value and rate for hinge/prismatic bodies; unused otherwise.
        scalar: f64,
        scalar_vel: f64,
    },
    Particles {
        positions: Vec<DVec3>,
        velocities: Vec<DVec3>,
    },
}

/// Complete simulation state; a deterministic function of (scene, trajectory).
#[derive(Clone, Debug, PartialEq)]
pub struct SimState {
    pub bodies: Vec<BodyState>,
    pub time: f64,
}

impl SimState {
    pub fn initial(scene: &SceneConfig) -> SimState {
        let bodies = scene
            .objects
            .iter()
            .map(|o| match &o.shape {
                Shape::Mesh(_) => BodyState::Rigid {
                    pose: o.initial_pose,
                    linvel: DVec3::ZERO,
                    angvel: DVec3::ZERO,
                    scalar: 0.0,
                    scalar_vel: 0.0,
                },
                Shape::Blob(b) => BodyState::Particles {
                    positions: b
                        .particles
                        .iter()
                        .map(|p| o.initial_pose.transform_point(*p))
                        .collect(),
                    velocities: alloc::vec![DVec3::ZERO; b.particles.len()],
                },
            })
            .collect();
        SimState { bodies, time: 0.0 }
    }

    /// Pose of a rigid body by scene index.
    pub fn pose_of(&self, index: usize) -> Option<Pose6D> {
        match &self.bodies[index] {
            BodyState::Rigid { pose, .. } => Some(*pose),
            BodyState::Particles { .. } => None,
        }
    }

    /// Hinge angle / prismatic offset of a constrained body.
    pub fn scalar_of(&self, index: usize) -> Option<f64> {
        match &self.bodies[index] {
            BodyState::Rigid { scalar, .. } => Some(*scalar),
            BodyState::Particles { .. } => None,
        }
    }

    pub fn particles_of(&self, index: usize) -> Option<&[DVec3]> {
        match &self.bodies[index] {
            BodyState::Particles { positions, .. } => Some(positions),
            BodyState::Rigid { .. } => None,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.bodies.iter().all(|b| match b {
            BodyState::Rigid {
                pose,
                linvel,
                angvel,
                scalar,
                scalar_vel,
            } => {
                pose.is_finite()
                    && linvel.is_finite()
                    && angvel.is_finite()
                    && scalar.is_finite()
                    && scalar_vel.is_finite()
            }
            BodyState::Particles {
                positions,
                velocities,
            } => {
                positions.iter().all(|p| p.is_finite())
                    && velocities.iter().all(|v| v.is_finite())
            }
        })
    }

    /// Total kinetic energy over bodies (used by sanity checks).
    pub fn kinetic_energy(&self, scene: &SceneConfig) -> f64 {
        let mut e = 0.0;
        for (o, b) in scene.objects.iter().zip(&self.bodies) {
            match b {
                BodyState::Rigid { linvel, angvel, .. } => {
                    e += 0.5 * o.mass * linvel.length_squared();
                    if let Shape::Mesh(m) = &o.shape {
                        let (lo, hi) = m.aabb();
                        let d = hi - lo;
                        let i = o.mass / 12.0
                            * DVec3::new(
                                d.y * d.y + d.z * d.z,
                                d.x * d.x + d.z * d.z,
                                d.x * d.x + d.y * d.y,
                            );
                        e += 0.5 * (i * (*angvel * *angvel)).element_sum();
                    }
                }
                BodyState::Particles { velocities, .. } => {
                    let pm = o.mass / velocities.len() as f64;
                    for v in velocities {
                        e += 0.5 * pm * v.length_squared();
                    }
                }
            }
        }
        e
    }
}

/// Command applied to the actuator for the duration of a step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ActuatorCommand {
    RigidTarget(Pose6D),
    ScalarTarget(f64),
    ParticleVelocity(DVec3),
}

/// Waypoint sequences the optimizer searches over.
#[derive(Clone, Debug, PartialEq)]
pub enum TrajectoryMotion {
    /// One 6-DoF pose per waypoint (free rigid actuator).
    Rigid(Vec<Pose6D>),
    /// One DOF value per waypoint (hinge/prismatic actuator).
    Scalar(Vec<f64>),
    /// One shared velocity per segment for the actuated particle set.
    ParticleVelocity(Vec<DVec3>),
}

/// The action abstraction: one waypoint per retained keyframe, each driven
/// for a fixed segment duration.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub motion: TrajectoryMotion,
    pub segment_duration: f64,
}

impl Trajectory {
    pub fn new(motion: TrajectoryMotion, segment_duration: f64) -> Result<Self, SimError> {
        let t = Trajectory {
            motion,
            segment_duration,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.segment_duration <= 0.0 || self.segment_duration.is_nan() {
            return Err(SimError::InvalidTrajectory(
                "segment duration must be positive",
            ));
        }
        if self.waypoint_count() < 2 {
            return Err(SimError::InvalidTrajectory("need at least two waypoints"));
        }
        if !self.is_finite() {
            return Err(SimError::InvalidTrajectory("non-finite waypoint"));
        }
        Ok(())
    }

    pub fn waypoint_count(&self) -> usize {
        match &self.motion {
            TrajectoryMotion::Rigid(w) => w.len(),
            TrajectoryMotion::Scalar(w) => w.len(),
            TrajectoryMotion::ParticleVelocity(w) => w.len(),
        }
    }

    pub fn is_finite(&self) -> bool {
        match &self.motion {
            TrajectoryMotion::Rigid(w) => w.iter().all(|p| p.is_finite()),
            TrajectoryMotion::Scalar(w) => w.iter().all(|s| s.is_finite()),
            TrajectoryMotion::ParticleVelocity(w) => w.iter().all(|v| v.is_finite()),
        }
    }

    pub fn command_for_segment(&self, segment: usize) -> ActuatorCommand {
        match &self.motion {
            TrajectoryMotion::Rigid(w) => ActuatorCommand::RigidTarget(w[segment]),
            TrajectoryMotion::Scalar(w) => ActuatorCommand::ScalarTarget(w[segment]),
            TrajectoryMotion::ParticleVelocity(w) => {
                ActuatorCommand::ParticleVelocity(w[segment])
            }
        }
    }
}

/// Pose of a constrained body implied by its scalar DOF.
pub(crate) fn constrained_pose(spec: &ObjectSpec, scalar: f64) -> Pose6D {
    match spec.constraint {
        MotionConstraint::Hinge { pivot, axis } => {
            let rot = Pose6D::from_axis_angle(axis, scalar);
            let rel = spec.initial_pose.position - pivot;
            Pose6D::new(
                pivot + rot.rotate(rel),
                (rot.orientation * spec.initial_pose.orientation).normalize(),
            )
        }
        MotionConstraint::Prismatic { axis, .. } => Pose6D::new(
            spec.initial_pose.position + axis * scalar,
            spec.initial_pose.orientation,
        ),
        _ => spec.initial_pose,
    }
}

/// Per-instant boolean contact for ordered (foreground, target) pairs.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ContactMatrix {
    entries: Vec<(ObjectId, ObjectId, bool)>,
}

impl ContactMatrix {
    pub fn new(entries: Vec<(ObjectId, ObjectId, bool)>) -> Self {
        ContactMatrix { entries }
    }

    pub fn get(&self, foreground: ObjectId, target: ObjectId) -> Option<bool> {
        self.entries
            .iter()
            .find(|(f, t, _)| *f == foreground && *t == target)
            .map(|(_, _, c)| *c)
    }

    pub fn entries(&self) -> &[(ObjectId, ObjectId, bool)] {
        &self.entries
    }

    pub fn any_contact(&self) -> bool {
        self.entries.iter().any(|(_, _, c)| *c)
    }
}
