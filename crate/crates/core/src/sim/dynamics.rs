//! One integration step: PD/velocity actuation, gravity and spring forces,
//! inelastic contact impulses with positional de-penetration, constraint
//! projection, and the divergence check.

use alloc::vec::Vec;

use glam::DVec3;

use crate::geometry::{ObjectId, Pose6D, TriMesh};

use super::{
    constrained_pose, ActuatorCommand, BlobBehavior, BodyState, ContactMatrix, MotionConstraint,
    ObjectSpec, SceneConfig, Shape, SimError, SimState, MAX_ANG_SPEED, MAX_LIN_SPEED, PD_KD,
    PD_KP,
};

/// Fraction of rigid-rigid penetration corrected per resolution pass.
const POS_CORRECTION_RIGID: f64 = 0.5;
/// Particle penetration against rigid surfaces is corrected fully.
const POS_CORRECTION_PARTICLE: f64 = 1.0;
/// Contact resolution passes per step.
const CONTACT_PASSES: usize = 2;
/// Coulomb-style friction ratio for particle contacts.
const PARTICLE_FRICTION: f64 = 0.4;
/// Residual tangential speed below which a particle in contact sticks (m/s).
const PARTICLE_STICK_SPEED: f64 = 2e-3;
/// Tangential damping rate during rigid-rigid contact (s^-1).
const RIGID_TANGENTIAL_DAMP: f64 = 8.0;

/// Advance the state by one `scene.timestep`, driving the actuator with
/// `command`.
pub fn step(
    scene: &SceneConfig,
    state: &SimState,
    command: &ActuatorCommand,
) -> Result<SimState, SimError> {
    let mut next = state.clone();
    let dt = scene.timestep;
    integrate_velocities(scene, &mut next, command, dt);
    integrate_positions(scene, &mut next, dt, false);
    for _ in 0..CONTACT_PASSES {
        resolve_contacts(scene, &mut next, dt, false);
    }
    apply_dof_friction(scene, &mut next, dt);
    next.time = state.time + dt;
    check_finite(scene, &next)?;
    Ok(next)
}

/// Kinematic variant used for video synthesis: the actuator pose is imposed
/// directly (`imposed`), passive bodies still respond dynamically, and the
/// actuated entity ignores contact corrections.
pub(crate) fn step_kinematic(
    scene: &SceneConfig,
    state: &SimState,
    imposed: &ImposedActuation,
) -> Result<SimState, SimError> {
    let mut next = state.clone();
    let dt = scene.timestep;
    integrate_velocities_kinematic(scene, &mut next, imposed, dt);
    integrate_positions(scene, &mut next, dt, true);
    impose_actuation(scene, &mut next, imposed, dt);
    for _ in 0..CONTACT_PASSES {
        resolve_contacts(scene, &mut next, dt, true);
    }
    apply_dof_friction(scene, &mut next, dt);
    next.time = state.time + dt;
    check_finite(scene, &next)?;
    Ok(next)
}

/// Exact actuator state for one kinematic step.
#[derive(Clone, Debug)]
pub(crate) enum ImposedActuation {
    Pose(Pose6D),
    Scalar(f64),
    ParticleVelocity(DVec3),
}

fn integrate_velocities(
    scene: &SceneConfig,
    state: &mut SimState,
    command: &ActuatorCommand,
    dt: f64,
) {
    let actuator_index = scene.actuator_index();
    for (i, spec) in scene.objects.iter().enumerate() {
        let drives_this = i == actuator_index;
        match &mut state.bodies[i] {
            BodyState::Rigid {
                pose,
                linvel,
                angvel,
                scalar,
                scalar_vel,
            } => {
                if !spec.is_movable() {
                    continue;
                }
                match spec.constraint {
                    MotionConstraint::Free => {
                        if drives_this {
                            if let ActuatorCommand::RigidTarget(target) = command {
                                pd_drive(pose, linvel, angvel, target, dt);
                            }
                        } else {
                            *linvel += scene.gravity * dt;
                        }
                    }
                    MotionConstraint::Hinge { .. } | MotionConstraint::Prismatic { .. } => {
                        if drives_this {
                            if let ActuatorCommand::ScalarTarget(q_target) = command {
                                let acc = PD_KP * (q_target - *scalar) - PD_KD * *scalar_vel;
                                *scalar_vel += acc * dt;
                                let clamp = match spec.constraint {
                                    MotionConstraint::Hinge { .. } => MAX_ANG_SPEED,
                                    _ => MAX_LIN_SPEED,
                                };
                                *scalar_vel = scalar_vel.clamp(-clamp, clamp);
                            }
                        } else if let MotionConstraint::Prismatic {
                            axis,
                            friction_accel,
                        } = spec.constraint
                        {
                            // dry friction applies before positions move so a
                            // sub-threshold pull (gravity) cannot make it creep
                            *scalar_vel += scene.gravity.dot(axis) * dt;
                            let drop = friction_accel * dt;
                            if scalar_vel.abs() <= drop {
                                *scalar_vel = 0.0;
                            } else {
                                *scalar_vel -= drop * scalar_vel.signum();
                            }
                        }
                    }
                    MotionConstraint::Fixed => {}
                }
            }
            BodyState::Particles {
                positions,
                velocities,
            } => {
                let blob = match &spec.shape {
                    Shape::Blob(b) => b,
                    Shape::Mesh(_) => unreachable!("particle state on mesh object"),
                };
                let actuated_cmd = if drives_this {
                    match command {
                        ActuatorCommand::ParticleVelocity(v) => Some(*v),
                        _ => None,
                    }
                } else {
                    None
                };
                apply_particle_forces(blob, positions, velocities, scene.gravity, dt);
                if let Some(v) = actuated_cmd {
                    for &idx in &blob.actuated {
                        velocities[idx as usize] = v;
                    }
                }
            }
        }
    }
}

fn integrate_velocities_kinematic(
    scene: &SceneConfig,
    state: &mut SimState,
    imposed: &ImposedActuation,
    dt: f64,
) {
    let actuator_index = scene.actuator_index();
    for (i, spec) in scene.objects.iter().enumerate() {
        if i == actuator_index {
            // handled by impose_actuation, except particle blobs whose
            // non-actuated particles still need forces
            if let BodyState::Particles {
                positions,
                velocities,
            } = &mut state.bodies[i]
            {
                if let Shape::Blob(blob) = &spec.shape {
                    apply_particle_forces(blob, positions, velocities, scene.gravity, dt);
                    if let ImposedActuation::ParticleVelocity(v) = imposed {
                        for &idx in &blob.actuated {
                            velocities[idx as usize] = *v;
                        }
                    }
                }
            }
            continue;
        }
        match &mut state.bodies[i] {
            BodyState::Rigid {
                linvel, scalar_vel, ..
            } => {
                if !spec.is_movable() {
                    continue;
                }
                match spec.constraint {
                    MotionConstraint::Free => *linvel += scene.gravity * dt,
                    MotionConstraint::Prismatic {
                        axis,
                        friction_accel,
                    } => {
                        *scalar_vel += scene.gravity.dot(axis) * dt;
                        let drop = friction_accel * dt;
                        if scalar_vel.abs() <= drop {
                            *scalar_vel = 0.0;
                        } else {
                            *scalar_vel -= drop * scalar_vel.signum();
                        }
                    }
                    _ => {}
                }
            }
            BodyState::Particles {
                positions,
                velocities,
            } => {
                if let Shape::Blob(blob) = &spec.shape {
                    apply_particle_forces(blob, positions, velocities, scene.gravity, dt);
                }
            }
        }
    }
}

fn apply_particle_forces(
    blob: &super::ParticleBlob,
    positions: &mut [DVec3],
    velocities: &mut [DVec3],
    gravity: DVec3,
    dt: f64,
) {
    for v in velocities.iter_mut() {
        *v += gravity * dt;
    }
    if blob.behavior == BlobBehavior::CohesiveElastic {
        for &(i, j, rest) in blob.links() {
            let (i, j) = (i as usize, j as usize);
            let delta = positions[j] - positions[i];
            let len = delta.length();
            if len < 1e-12 {
                continue;
            }
            let dir = delta / len;
            let stretch = len - rest;
            let rel_speed = (velocities[j] - velocities[i]).dot(dir);
            let acc = blob.stiffness * stretch + blob.damping * rel_speed;
            velocities[i] += dir * (acc * dt);
            velocities[j] -= dir * (acc * dt);
        }
    }
}

fn pd_drive(pose: &mut Pose6D, linvel: &mut DVec3, angvel: &mut DVec3, target: &Pose6D, dt: f64) {
    let acc = PD_KP * (target.position - pose.position) - PD_KD * *linvel;
    *linvel += acc * dt;
    let speed = linvel.length();
    if speed > MAX_LIN_SPEED {
        *linvel *= MAX_LIN_SPEED / speed;
    }
    let rot_err = pose.rotation_to(target);
    let ang_acc = PD_KP * rot_err - PD_KD * *angvel;
    *angvel += ang_acc * dt;
    let ang_speed = angvel.length();
    if ang_speed > MAX_ANG_SPEED {
        *angvel *= MAX_ANG_SPEED / ang_speed;
    }
}

fn integrate_positions(scene: &SceneConfig, state: &mut SimState, dt: f64, kinematic: bool) {
    let actuator_index = scene.actuator_index();
    for (i, spec) in scene.objects.iter().enumerate() {
        if kinematic && i == actuator_index && matches!(spec.shape, Shape::Mesh(_)) {
            continue; // pose imposed separately
        }
        match &mut state.bodies[i] {
            BodyState::Rigid {
                pose,
                linvel,
                angvel,
                scalar,
                scalar_vel,
            } => {
                if !spec.is_movable() {
                    continue;
                }
                match spec.constraint {
                    MotionConstraint::Free => {
                        *pose = pose.with_increment(*linvel * dt, *angvel * dt);
                    }
                    MotionConstraint::Hinge { .. } | MotionConstraint::Prismatic { .. } => {
                        *scalar += *scalar_vel * dt;
                        *pose = constrained_pose(spec, *scalar);
                        sync_constrained_velocity(spec, *scalar_vel, pose, linvel, angvel);
                    }
                    MotionConstraint::Fixed => {}
                }
            }
            BodyState::Particles {
                positions,
                velocities,
            } => {
                for (p, v) in positions.iter_mut().zip(velocities.iter()) {
                    *p += *v * dt;
                }
            }
        }
    }
}

/// Keep the cartesian twist of a constrained body consistent with its DOF
/// rate so contact impulses see correct surface velocities.
fn sync_constrained_velocity(
    spec: &ObjectSpec,
    scalar_vel: f64,
    pose: &Pose6D,
    linvel: &mut DVec3,
    angvel: &mut DVec3,
) {
    match spec.constraint {
        MotionConstraint::Hinge { pivot, axis } => {
            *angvel = axis * scalar_vel;
            *linvel = angvel.cross(pose.position - pivot);
        }
        MotionConstraint::Prismatic { axis, .. } => {
            *linvel = axis * scalar_vel;
            *angvel = DVec3::ZERO;
        }
        _ => {}
    }
}

fn impose_actuation(
    scene: &SceneConfig,
    state: &mut SimState,
    imposed: &ImposedActuation,
    dt: f64,
) {
    let i = scene.actuator_index();
    let spec = &scene.objects[i];
    match (&mut state.bodies[i], imposed) {
        (
            BodyState::Rigid {
                pose,
                linvel,
                angvel,
                ..
            },
            ImposedActuation::Pose(target),
        ) => {
            *linvel = (target.position - pose.position) / dt;
            *angvel = pose.rotation_to(target) / dt;
            *pose = *target;
        }
        (
            BodyState::Rigid {
                pose,
                linvel,
                angvel,
                scalar,
                scalar_vel,
            },
            ImposedActuation::Scalar(q),
        ) => {
            *scalar_vel = (q - *scalar) / dt;
            *scalar = *q;
            *pose = constrained_pose(spec, *scalar);
            sync_constrained_velocity(spec, *scalar_vel, pose, linvel, angvel);
        }
        (BodyState::Particles { .. }, ImposedActuation::ParticleVelocity(_)) => {
            // already integrated with the imposed velocity
        }
        _ => {}
    }
}

/// World-space collision data for one rigid body.
struct RigidCollider<'a> {
    mesh: &'a TriMesh,
    pose: Pose6D,
    inv_pose: Pose6D,
    inv_mass: f64,
    inv_inertia: DVec3, // body-frame diagonal
    center: DVec3,
    radius: f64,
    movable: bool,
}

impl RigidCollider<'_> {
    fn point_velocity(&self, linvel: DVec3, angvel: DVec3, point: DVec3) -> DVec3 {
        linvel + angvel.cross(point - self.center)
    }

    /// Effective inverse mass for an impulse along `n` at `point`.
    fn k_normal(&self, point: DVec3, n: DVec3) -> f64 {
        if !self.movable {
            return 0.0;
        }
        let r = point - self.center;
        let rn = r.cross(n);
        // rotate into body frame, scale by inverse inertia, back to world
        let body = self.pose.orientation.conjugate() * rn;
        let ang = self.pose.orientation * (self.inv_inertia * body);
        self.inv_mass + ang.cross(r).dot(n)
    }
}

fn build_collider<'a>(
    spec: &'a ObjectSpec,
    body: &BodyState,
    actuator: bool,
) -> Option<RigidCollider<'a>> {
    let mesh = match &spec.shape {
        Shape::Mesh(m) => m,
        Shape::Blob(_) => return None,
    };
    let pose = match body {
        BodyState::Rigid { pose, .. } => *pose,
        _ => return None,
    };
    // the actuator has infinite authority; constrained passive bodies get
    // impulses projected onto their DOF afterwards
    let movable = spec.is_movable() && !actuator;
    let (lo, hi) = mesh.aabb();
    let d = hi - lo;
    let m = spec.mass;
    let inertia = DVec3::new(
        m / 12.0 * (d.y * d.y + d.z * d.z),
        m / 12.0 * (d.x * d.x + d.z * d.z),
        m / 12.0 * (d.x * d.x + d.y * d.y),
    );
    Some(RigidCollider {
        mesh,
        pose,
        inv_pose: pose.inverse(),
        inv_mass: if movable { 1.0 / m } else { 0.0 },
        inv_inertia: if movable {
            DVec3::new(1.0 / inertia.x, 1.0 / inertia.y, 1.0 / inertia.z)
        } else {
            DVec3::ZERO
        },
        center: pose.position,
        radius: mesh.bounding_radius(),
        movable,
    })
}

fn resolve_contacts(scene: &SceneConfig, state: &mut SimState, dt: f64, kinematic: bool) {
    let n = scene.objects.len();
    let actuator_index = scene.actuator_index();
    // rigid-rigid: samples of each movable body against every other volume
    for i in 0..n {
        let spec_i = &scene.objects[i];
        if !matches!(spec_i.shape, Shape::Mesh(_)) {
            continue;
        }
        let movable_i = spec_i.is_movable() && i != actuator_index;
        if !movable_i {
            continue;
        }
        for j in 0..n {
            if i == j || !matches!(scene.objects[j].shape, Shape::Mesh(_)) {
                continue;
            }
            if !spec_i.collide_background && !scene.objects[j].is_movable() {
                continue;
            }
            let (ca, cb) = {
                let a = build_collider(spec_i, &state.bodies[i], false);
                let b = build_collider(
                    &scene.objects[j],
                    &state.bodies[j],
                    j == actuator_index,
                );
                match (a, b) {
                    (Some(a), Some(b)) => (a, b),
                    _ => continue,
                }
            };
            if (ca.center - cb.center).length() > ca.radius + cb.radius + 1e-3 {
                continue;
            }
            // direction 1: samples of i inside j's volume
            rigid_pair_contacts(scene, state, dt, i, j, &ca, &cb, false);
            // direction 2: samples of j inside i's volume, but only when j
            // will not run its own movable iteration
            let movable_j = scene.objects[j].is_movable() && j != actuator_index;
            if !movable_j {
                let ca2 = build_collider(spec_i, &state.bodies[i], false).unwrap();
                let cb2 = build_collider(
                    &scene.objects[j],
                    &state.bodies[j],
                    j == actuator_index,
                )
                .unwrap();
                rigid_pair_contacts(scene, state, dt, i, j, &ca2, &cb2, true);
            }
        }
    }
    // particles against rigid bodies and against each other
    for i in 0..n {
        let spec_i = &scene.objects[i];
        let blob = match &spec_i.shape {
            Shape::Blob(b) => b,
            Shape::Mesh(_) => continue,
        };
        particle_contacts(scene, state, dt, i, blob, actuator_index, kinematic);
    }
}

#[allow(clippy::too_many_arguments)]
fn rigid_pair_contacts(
    scene: &SceneConfig,
    state: &mut SimState,
    dt: f64,
    i: usize,
    j: usize,
    ca: &RigidCollider<'_>,
    cb: &RigidCollider<'_>,
    reversed: bool,
) {
    // `reversed`: probe b's samples against a's volume; corrections still
    // apply to the pair symmetrically via inverse masses.
    let (sample_src, volume) = if reversed { (cb, ca) } else { (ca, cb) };
    let mut contacts: Vec<(DVec3, DVec3, f64)> = Vec::new(); // (point, normal, depth)
    for s in sample_src.mesh.surface_samples() {
        let world = sample_src.pose.transform_point(*s);
        let local = volume.inv_pose.transform_point(world);
        let hit = volume.mesh.signed_distance(local);
        if hit.distance < 0.0 {
            let normal_world = volume.pose.rotate(hit.normal);
            // normal convention: pushes `a` away from `b`
            let n = if reversed { -normal_world } else { normal_world };
            contacts.push((world, n, -hit.distance));
        }
    }
    if contacts.is_empty() {
        return;
    }
    // reduce the manifold to one aggregate contact: a symmetric face patch
    // then yields a torque-free impulse, which keeps resting boxes at rest
    let total_depth: f64 = contacts.iter().map(|(_, _, d)| d).sum();
    let mut point = DVec3::ZERO;
    let mut normal = DVec3::ZERO;
    let mut max_depth = 0.0f64;
    for (p, n, d) in &contacts {
        point += *p * *d;
        normal += *n * *d;
        max_depth = max_depth.max(*d);
    }
    point /= total_depth;
    let normal_len = normal.length();
    if normal_len < 1e-12 {
        return; // opposing normals cancel; nothing coherent to resolve
    }
    normal /= normal_len;
    apply_rigid_impulse(scene, state, dt, i, j, point, normal, max_depth);
}

#[allow(clippy::too_many_arguments)]
fn apply_rigid_impulse(
    scene: &SceneConfig,
    state: &mut SimState,
    dt: f64,
    i: usize,
    j: usize,
    point: DVec3,
    n: DVec3,
    depth: f64,
) {
    let actuator_index = scene.actuator_index();
    let ca = build_collider(&scene.objects[i], &state.bodies[i], i == actuator_index).unwrap();
    let cb = build_collider(&scene.objects[j], &state.bodies[j], j == actuator_index).unwrap();
    let (va, wa) = match &state.bodies[i] {
        BodyState::Rigid { linvel, angvel, .. } => (*linvel, *angvel),
        _ => return,
    };
    let (vb, wb) = match &state.bodies[j] {
        BodyState::Rigid { linvel, angvel, .. } => (*linvel, *angvel),
        _ => return,
    };
    let v_rel = ca.point_velocity(va, wa, point) - cb.point_velocity(vb, wb, point);
    let vn = v_rel.dot(n);
    let ka = ca.k_normal(point, n);
    let kb = cb.k_normal(point, n);
    let k_sum = ka + kb;
    if k_sum <= 0.0 {
        return;
    }
    if vn < 0.0 {
        // inelastic: cancel the approach velocity
        let j_mag = -vn / k_sum;
        apply_body_impulse(state, i, &ca, point, n * j_mag);
        apply_body_impulse(state, j, &cb, point, -(n * j_mag));
    }
    // tangential damping while in contact (dissipative only)
    let damp = (RIGID_TANGENTIAL_DAMP * dt).min(1.0);
    if damp > 0.0 {
        let v_rel = {
            let (va, wa) = rigid_twist(state, i);
            let (vb, wb) = rigid_twist(state, j);
            ca.point_velocity(va, wa, point) - cb.point_velocity(vb, wb, point)
        };
        let vt = v_rel - n * v_rel.dot(n);
        let vt_len = vt.length();
        if vt_len > 1e-9 {
            let t_dir = vt / vt_len;
            let kt = ca.k_normal(point, t_dir) + cb.k_normal(point, t_dir);
            if kt > 0.0 {
                let j_t = -(vt_len * damp) / kt;
                apply_body_impulse(state, i, &ca, point, t_dir * j_t);
                apply_body_impulse(state, j, &cb, point, -(t_dir * j_t));
            }
        }
    }
    // positional de-penetration split by inverse mass (no velocity change)
    let w_sum = ca.inv_mass + cb.inv_mass;
    if w_sum > 0.0 {
        let push = n * (depth * POS_CORRECTION_RIGID / w_sum);
        shift_body(scene, state, i, push * ca.inv_mass);
        shift_body(scene, state, j, -(push * cb.inv_mass));
    }
}

fn rigid_twist(state: &SimState, i: usize) -> (DVec3, DVec3) {
    match &state.bodies[i] {
        BodyState::Rigid { linvel, angvel, .. } => (*linvel, *angvel),
        _ => (DVec3::ZERO, DVec3::ZERO),
    }
}

fn apply_body_impulse(
    state: &mut SimState,
    i: usize,
    collider: &RigidCollider<'_>,
    point: DVec3,
    impulse: DVec3,
) {
    if !collider.movable {
        return;
    }
    if let BodyState::Rigid { linvel, angvel, .. } = &mut state.bodies[i] {
        *linvel += impulse * collider.inv_mass;
        let r = point - collider.center;
        let torque = r.cross(impulse);
        let body = collider.pose.orientation.conjugate() * torque;
        *angvel += collider.pose.orientation * (collider.inv_inertia * body);
    }
}

/// Translate a body, respecting its constraint (projection onto the DOF).
fn shift_body(scene: &SceneConfig, state: &mut SimState, i: usize, delta: DVec3) {
    let spec = &scene.objects[i];
    if let BodyState::Rigid {
        pose,
        scalar,
        linvel,
        angvel,
        scalar_vel,
    } = &mut state.bodies[i]
    {
        match spec.constraint {
            MotionConstraint::Free => pose.position += delta,
            MotionConstraint::Prismatic { axis, .. } => {
                *scalar += delta.dot(axis);
                *pose = constrained_pose(spec, *scalar);
                sync_constrained_velocity(spec, *scalar_vel, pose, linvel, angvel);
            }
            MotionConstraint::Hinge { pivot, axis } => {
                // convert the push into an angle change via the moment arm
                let arm = pose.position - pivot;
                let tangent = axis.cross(arm);
                let len2 = tangent.length_squared();
                if len2 > 1e-12 {
                    *scalar += delta.dot(tangent) / len2;
                    *pose = constrained_pose(spec, *scalar);
                    sync_constrained_velocity(spec, *scalar_vel, pose, linvel, angvel);
                }
            }
            MotionConstraint::Fixed => {}
        }
    }
}

/// Fold cartesian contact impulses accumulated on constrained bodies back
/// into their DOF rate (dry friction is applied pre-integration).
fn apply_dof_friction(scene: &SceneConfig, state: &mut SimState, _dt: f64) {
    let actuator_index = scene.actuator_index();
    for (i, spec) in scene.objects.iter().enumerate() {
        if i == actuator_index {
            continue;
        }
        if let MotionConstraint::Prismatic { axis, .. } = spec.constraint {
            if let BodyState::Rigid {
                linvel,
                angvel,
                scalar_vel,
                pose,
                scalar,
            } = &mut state.bodies[i]
            {
                *scalar_vel = linvel.dot(axis);
                *pose = constrained_pose(spec, *scalar);
                sync_constrained_velocity(spec, *scalar_vel, pose, linvel, angvel);
            }
        }
    }
}

fn particle_contacts(
    scene: &SceneConfig,
    state: &mut SimState,
    dt: f64,
    blob_index: usize,
    blob: &super::ParticleBlob,
    actuator_index: usize,
    kinematic: bool,
) {
    let n_objects = scene.objects.len();
    let radius = blob.radius;
    let count = match &state.bodies[blob_index] {
        BodyState::Particles { positions, .. } => positions.len(),
        _ => return,
    };
    let particle_inv_mass = count as f64 / scene.objects[blob_index].mass;
    let is_actuated = |p: usize| blob.actuated.contains(&(p as u32));
    // vs rigid bodies
    for j in 0..n_objects {
        if j == blob_index {
            continue;
        }
        if !scene.objects[blob_index].collide_background && !scene.objects[j].is_movable() {
            continue;
        }
        let collider = match build_collider(
            &scene.objects[j],
            &state.bodies[j],
            j == actuator_index,
        ) {
            Some(c) => c,
            None => continue,
        };
        let (vj, wj) = rigid_twist(state, j);
        let mut rigid_feedback: Vec<(DVec3, DVec3)> = Vec::new();
        if let BodyState::Particles {
            positions,
            velocities,
        } = &mut state.bodies[blob_index]
        {
            for p in 0..count {
                // skip corrections on video-idealized actuated particles
                if kinematic && is_actuated(p) {
                    continue;
                }
                let pos = positions[p];
                if (pos - collider.center).length() > collider.radius + radius + 1e-3 {
                    continue;
                }
                let local = collider.inv_pose.transform_point(pos);
                let hit = collider.mesh.signed_distance(local);
                let pen = radius - hit.distance;
                if pen <= 0.0 {
                    continue;
                }
                let n = collider.pose.rotate(hit.normal);
                let surf_vel = collider.point_velocity(vj, wj, pos);
                let v_rel = velocities[p] - surf_vel;
                let vn = v_rel.dot(n);
                let mut impulse_on_rigid = DVec3::ZERO;
                if vn < 0.0 {
                    let k = particle_inv_mass + collider.k_normal(pos, n);
                    let j_mag = -vn / k;
                    velocities[p] += n * (j_mag * particle_inv_mass);
                    impulse_on_rigid -= n * j_mag;
                    // Coulomb-style tangential damping
                    let v_rel2 = velocities[p] - surf_vel;
                    let vt = v_rel2 - n * v_rel2.dot(n);
                    let vt_len = vt.length();
                    if vt_len > 1e-12 {
                        let max_drop = PARTICLE_FRICTION * j_mag * particle_inv_mass
                            + PARTICLE_STICK_SPEED;
                        let drop = vt_len.min(max_drop);
                        velocities[p] -= vt / vt_len * drop;
                        impulse_on_rigid += vt / vt_len * (drop / particle_inv_mass);
                    }
                } else {
                    // resting contact: mild tangential damping
                    let vt = v_rel - n * vn;
                    let vt_len = vt.length();
                    if vt_len > 1e-12 {
                        let drop = vt_len.min(PARTICLE_STICK_SPEED + vt_len * (4.0 * dt).min(1.0));
                        velocities[p] -= vt / vt_len * drop;
                    }
                }
                positions[p] += n * (pen * POS_CORRECTION_PARTICLE);
                if collider.movable && impulse_on_rigid != DVec3::ZERO {
                    rigid_feedback.push((pos, impulse_on_rigid));
                }
            }
        }
        for (point, impulse) in rigid_feedback {
            apply_body_impulse(state, j, &collider, point, impulse);
        }
    }
    // particle-particle within the blob (uniform grid over 2*radius cells)
    if let BodyState::Particles {
        positions,
        velocities,
    } = &mut state.bodies[blob_index]
    {
        let cell = 2.0 * radius;
        let key = |p: DVec3| -> (i32, i32, i32) {
            (
                libm::floor(p.x / cell) as i32,
                libm::floor(p.y / cell) as i32,
                libm::floor(p.z / cell) as i32,
            )
        };
        let mut cells: Vec<((i32, i32, i32), u32)> =
            positions.iter().enumerate().map(|(i, p)| (key(*p), i as u32)).collect();
        cells.sort_unstable();
        let find = |cells: &[((i32, i32, i32), u32)], k: (i32, i32, i32)| -> (usize, usize) {
            let lo = cells.partition_point(|(c, _)| *c < k);
            let hi = cells.partition_point(|(c, _)| *c <= k);
            (lo, hi)
        };
        let mut pairs: Vec<(u32, u32)> = Vec::new();
        for (ck, i) in &cells {
            for dx in -1..=1 {
                for dy in -1..=1 {
                    for dz in -1..=1 {
                        let nk = (ck.0 + dx, ck.1 + dy, ck.2 + dz);
                        let (lo, hi) = find(&cells, nk);
                        for (_, j) in &cells[lo..hi] {
                            if *i < *j {
                                pairs.push((*i, *j));
                            }
                        }
                    }
                }
            }
        }
        pairs.sort_unstable();
        for (a, b) in pairs {
            let (a, b) = (a as usize, b as usize);
            let delta = positions[b] - positions[a];
            let dist = delta.length();
            let pen = 2.0 * radius - dist;
            if pen <= 0.0 || dist < 1e-12 {
                continue;
            }
            let n = delta / dist;
            let act_a = is_actuated(a);
            let act_b = is_actuated(b);
            let (wa, wb) = match (act_a, act_b) {
                (true, true) => (0.0, 0.0),
                (true, false) => (0.0, 1.0),
                (false, true) => (1.0, 0.0),
                (false, false) => (0.5, 0.5),
            };
            if wa + wb == 0.0 {
                continue;
            }
            let vn = (velocities[b] - velocities[a]).dot(n);
            if vn < 0.0 {
                let j_mag = -vn / (wa + wb);
                velocities[a] -= n * (j_mag * wa);
                velocities[b] += n * (j_mag * wb);
            }
            let push = pen / (wa + wb) * 0.8;
            positions[a] -= n * (push * wa);
            positions[b] += n * (push * wb);
        }
    }
}

fn check_finite(scene: &SceneConfig, state: &SimState) -> Result<(), SimError> {
    for (spec, body) in scene.objects.iter().zip(&state.bodies) {
        let ok = match body {
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
        };
        if !ok {
            return Err(SimError::Diverged {
                object: spec.id,
                time: state.time,
            });
        }
    }
    Ok(())
}

/// Surface-sample distance between two objects in the current state.
fn pair_distance(scene: &SceneConfig, state: &SimState, i: usize, j: usize) -> f64 {
    let spec_i = &scene.objects[i];
    let spec_j = &scene.objects[j];
    match (&spec_i.shape, &spec_j.shape) {
        (Shape::Mesh(ma), Shape::Mesh(mb)) => {
            let pa = state.pose_of(i).unwrap();
            let pb = state.pose_of(j).unwrap();
            let inv_b = pb.inverse();
            let inv_a = pa.inverse();
            let mut best = f64::INFINITY;
            for s in ma.surface_samples() {
                let hit = mb.signed_distance(inv_b.transform_point(pa.transform_point(*s)));
                best = best.min(hit.distance);
            }
            for s in mb.surface_samples() {
                let hit = ma.signed_distance(inv_a.transform_point(pb.transform_point(*s)));
                best = best.min(hit.distance);
            }
            best
        }
        (Shape::Blob(ba), Shape::Mesh(mb)) => {
            let pb = state.pose_of(j).unwrap();
            let inv_b = pb.inverse();
            let mut best = f64::INFINITY;
            for p in state.particles_of(i).unwrap() {
                let hit = mb.signed_distance(inv_b.transform_point(*p));
                best = best.min(hit.distance - ba.radius);
            }
            best
        }
        (Shape::Mesh(_), Shape::Blob(_)) => pair_distance(scene, state, j, i),
        (Shape::Blob(ba), Shape::Blob(bb)) => {
            let mut best = f64::INFINITY;
            for p in state.particles_of(i).unwrap() {
                for q in state.particles_of(j).unwrap() {
                    best = best.min((*p - *q).length() - ba.radius - bb.radius);
                }
            }
            best
        }
    }
}

/// Pairwise contact booleans for every ordered (foreground, target) pair,
/// excluding self-pairs: two objects are in contact when their minimum
/// surface-sample distance is below `scene.contact_epsilon`.
pub fn contacts(state: &SimState, scene: &SceneConfig) -> ContactMatrix {
    let mut entries: Vec<(ObjectId, ObjectId, bool)> = Vec::new();
    let fg: Vec<usize> = scene
        .objects
        .iter()
        .enumerate()
        .filter(|(_, o)| !o.background)
        .map(|(i, _)| i)
        .collect();
    let targets: Vec<usize> = scene
        .objects
        .iter()
        .enumerate()
        .filter(|(_, o)| o.target)
        .map(|(i, _)| i)
        .collect();
    for &f in &fg {
        for &t in &targets {
            if f == t {
                continue;
            }
            let touching = pair_distance(scene, state, f, t) < scene.contact_epsilon;
            entries.push((scene.objects[f].id, scene.objects[t].id, touching));
        }
    }
    ContactMatrix::new(entries)
}
