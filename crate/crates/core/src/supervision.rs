//! Assembles the supervision bundle extracted from the guidance video and
//! scores simulated rollouts against it: keyframed actuator-mask agreement,
//! final target-mask agreement, final point-cloud Chamfer terms, and the
//! one-sided contact penalty, combined as a weighted sum (lower is better).

use alloc::string::String;
use alloc::vec::Vec;

use glam::{DQuat, DVec3};
use thiserror::Error;

use crate::geometry::{
    backproject, chamfer, iou, GeometryError, ObjectId, PointCloud, Pose6D, SegMask, TriMesh,
};
use crate::perception::{AffordanceRegion, ContactSchedule};
use crate::render::FrameObservation;
use crate::rng::Rng;
use crate::sim::{contacts, SceneConfig, SimError, SimState};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SupervisionError {
    #[error("keyframes misaligned: bundle has {expected}, rollout has {got}")]
    MisalignedKeyframes { expected: usize, got: usize },
    #[error("invalid weights: {0}")]
    InvalidWeights(&'static str),
    #[error("no affordance region available")]
    NoAffordance,
    #[error("bad bundle payload: {0}")]
    BadPayload(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// Penalty distance substituted when a compared point cloud is empty (m).
pub const EMPTY_CLOUD_PENALTY: f64 = 1.0;

/// Aggregation weights over the five supervision terms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CostWeights {
    pub w_act_iou: f64,
    pub w_tar_iou: f64,
    pub w_act_cd: f64,
    pub w_tar_cd: f64,
    pub w_contact: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        CostWeights {
            w_act_iou: 1.0,
            w_tar_iou: 2.0,
            w_act_cd: 5.0,
            w_tar_cd: 10.0,
            w_contact: 2.0,
        }
    }
}

impl CostWeights {
    pub fn validate(&self) -> Result<(), SupervisionError> {
        let all = [
            self.w_act_iou,
            self.w_tar_iou,
            self.w_act_cd,
            self.w_tar_cd,
            self.w_contact,
        ];
        if all.iter().any(|w| *w < 0.0 || !w.is_finite()) {
            return Err(SupervisionError::InvalidWeights(
                "weights must be finite and non-negative",
            ));
        }
        if all.iter().all(|w| *w == 0.0) {
            return Err(SupervisionError::InvalidWeights(
                "at least one weight must be positive",
            ));
        }
        Ok(())
    }

    pub fn without_contact(mut self) -> Self {
        self.w_contact = 0.0;
        self
    }
}

/// Everything extracted from the guidance video that the cost needs.
#[derive(Clone, Debug)]
pub struct SupervisionBundle {
    pub keyframes: Vec<usize>,
    pub actuator: ObjectId,
    pub target: ObjectId,
    /// Actuator mask at every retained keyframe.
    pub actuator_masks: Vec<SegMask>,
    /// Target mask at the final keyframe.
    pub target_final_mask: SegMask,
    pub actuator_final_cloud: PointCloud,
    pub target_final_cloud: PointCloud,
    pub contacts: ContactSchedule,
    pub affordance: AffordanceRegion,
}

impl SupervisionBundle {
    pub fn validate(&self) -> Result<(), SupervisionError> {
        if self.actuator_masks.len() != self.keyframes.len() {
            return Err(SupervisionError::MisalignedKeyframes {
                expected: self.keyframes.len(),
                got: self.actuator_masks.len(),
            });
        }
        if self.contacts.keyframes != self.keyframes {
            return Err(SupervisionError::MisalignedKeyframes {
                expected: self.keyframes.len(),
                got: self.contacts.keyframes.len(),
            });
        }
        Ok(())
    }
}

/// Mean keyframed actuator silhouette disagreement: 1 - IoU averaged over
/// the retained keyframes.
pub fn actuator_mask_cost(
    rollout_obs: &[FrameObservation],
    bundle: &SupervisionBundle,
) -> Result<f64, SupervisionError> {
    if rollout_obs.len() != bundle.keyframes.len() {
        return Err(SupervisionError::MisalignedKeyframes {
            expected: bundle.keyframes.len(),
            got: rollout_obs.len(),
        });
    }
    let mut total = 0.0;
    for (obs, mask) in rollout_obs.iter().zip(&bundle.actuator_masks) {
        total += 1.0 - iou(&obs.seg, mask, bundle.actuator)?;
    }
    Ok(total / rollout_obs.len() as f64)
}

/// Final-keyframe target silhouette disagreement.
pub fn target_mask_cost(
    final_obs: &FrameObservation,
    bundle: &SupervisionBundle,
) -> Result<f64, SupervisionError> {
    Ok(1.0 - iou(&final_obs.seg, &bundle.target_final_mask, bundle.target)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CloudSubject {
    Actuator,
    Target,
}

/// Chamfer distance between the simulated object cloud (backprojected from
/// the final rendered frame) and the bundle's video-extracted cloud. An
/// empty cloud on either side costs the scene-scale penalty.
pub fn pointcloud_cost(
    final_obs: &FrameObservation,
    bundle: &SupervisionBundle,
    which: CloudSubject,
) -> Result<f64, SupervisionError> {
    let (label, reference) = match which {
        CloudSubject::Actuator => (bundle.actuator, &bundle.actuator_final_cloud),
        CloudSubject::Target => (bundle.target, &bundle.target_final_cloud),
    };
    let sim_cloud = backproject(&final_obs.depth, &final_obs.seg, label, &final_obs.camera)?;
    if sim_cloud.is_empty() || reference.is_empty() {
        return Ok(EMPTY_CLOUD_PENALTY);
    }
    // the same scene-scale cap keeps wild rollouts finite and rankable
    Ok(chamfer(&sim_cloud, reference)?.min(EMPTY_CLOUD_PENALTY))
}

/// One-sided contact penalty: of the (keyframe, pair) entries the schedule
/// marks as required, the fraction the rollout failed to realize. Extra
/// simulated contacts never cost anything.
pub fn contact_cost(
    rollout_states: &[SimState],
    schedule: &ContactSchedule,
    scene: &SceneConfig,
) -> Result<f64, SupervisionError> {
    if rollout_states.len() != schedule.keyframes.len() {
        return Err(SupervisionError::MisalignedKeyframes {
            expected: schedule.keyframes.len(),
            got: rollout_states.len(),
        });
    }
    let mut required = 0usize;
    let mut missing = 0usize;
    for (state, matrix) in rollout_states.iter().zip(&schedule.matrices) {
        let mut sim_matrix: Option<crate::sim::ContactMatrix> = None;
        for (f, t, needed) in matrix.entries() {
            if !*needed {
                continue;
            }
            required += 1;
            let sim = sim_matrix.get_or_insert_with(|| contacts(state, scene));
            if sim.get(*f, *t) != Some(true) {
                missing += 1;
            }
        }
    }
    if required == 0 {
        Ok(0.0)
    } else {
        Ok(missing as f64 / required as f64)
    }
}

/// Per-term breakdown of one rollout's cost.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CostBreakdown {
    pub act_iou: f64,
    pub tar_iou: f64,
    pub act_cd: f64,
    pub tar_cd: f64,
    pub contact: f64,
    pub total: f64,
}

/// Weighted sum of the five supervision terms over a recorded rollout.
/// `rollout_obs`/`rollout_states` carry one entry per retained keyframe.
pub fn total_cost(
    rollout_obs: &[FrameObservation],
    rollout_states: &[SimState],
    bundle: &SupervisionBundle,
    weights: &CostWeights,
    scene: &SceneConfig,
) -> Result<CostBreakdown, SupervisionError> {
    weights.validate()?;
    bundle.validate()?;
    let final_obs = rollout_obs
        .last()
        .ok_or(SupervisionError::MisalignedKeyframes {
            expected: bundle.keyframes.len(),
            got: 0,
        })?;
    let act_iou = actuator_mask_cost(rollout_obs, bundle)?;
    let tar_iou = target_mask_cost(final_obs, bundle)?;
    let act_cd = pointcloud_cost(final_obs, bundle, CloudSubject::Actuator)?;
    let tar_cd = pointcloud_cost(final_obs, bundle, CloudSubject::Target)?;
    let contact = contact_cost(rollout_states, &bundle.contacts, scene)?;
    let total = weights.w_act_iou * act_iou
        + weights.w_tar_iou * tar_iou
        + weights.w_act_cd * act_cd
        + weights.w_tar_cd * tar_cd
        + weights.w_contact * contact;
    Ok(CostBreakdown {
        act_iou,
        tar_iou,
        act_cd,
        tar_cd,
        contact,
        total,
    })
}

/// Uniformly sample a grasp pose from the affordance region: the position is
/// one of the backprojected grasp points, the approach axis (+z of the
/// returned pose) is the inward surface normal of the actuator there.
pub fn sample_grasp(
    affordance: &AffordanceRegion,
    actuator_mesh: &TriMesh,
    actuator_pose: &Pose6D,
    rng: &mut Rng,
) -> Result<Pose6D, SupervisionError> {
    if affordance.grasp_points.is_empty() {
        return Err(SupervisionError::NoAffordance);
    }
    let point = affordance.grasp_points[rng.index(affordance.grasp_points.len())];
    let local = actuator_pose.inverse().transform_point(point);
    let hit = actuator_mesh.signed_distance(local);
    let outward_world = actuator_pose.rotate(hit.normal);
    let approach = -outward_world;
    // build an orthonormal frame with +z along the approach axis
    let helper = if approach.x.abs() < 0.9 { DVec3::X } else { DVec3::Y };
    let x_axis = helper.cross(approach).normalize();
    let y_axis = approach.cross(x_axis);
    let m = glam::DMat3::from_cols(x_axis, y_axis, approach);
    Ok(Pose6D::new(point, DQuat::from_mat3(&m)))
}

/// Text/binary serialization of a bundle as named directory entries: masks
/// and depth in the raster formats, clouds as ASCII xyz, schedule and
/// affordance as line-oriented text.
pub fn bundle_to_entries(bundle: &SupervisionBundle) -> Vec<(String, Vec<u8>)> {
    let mut entries = Vec::new();
    let mut meta = String::new();
    meta.push_str(&alloc::format!("actuator {}\n", bundle.actuator.0));
    meta.push_str(&alloc::format!("target {}\n", bundle.target.0));
    let kfs: Vec<String> = bundle.keyframes.iter().map(|k| alloc::format!("{k}")).collect();
    meta.push_str(&alloc::format!("keyframes {}\n", kfs.join(" ")));
    entries.push(("bundle.txt".into(), meta.into_bytes()));
    for (i, mask) in bundle.actuator_masks.iter().enumerate() {
        entries.push((alloc::format!("actuator_mask_{i:03}.segm"), mask.encode()));
    }
    entries.push(("target_final.segm".into(), bundle.target_final_mask.encode()));
    entries.push((
        "actuator_final.xyz".into(),
        cloud_to_xyz(&bundle.actuator_final_cloud),
    ));
    entries.push((
        "target_final.xyz".into(),
        cloud_to_xyz(&bundle.target_final_cloud),
    ));
    let mut sched = String::new();
    for (kf, matrix) in bundle.contacts.keyframes.iter().zip(&bundle.contacts.matrices) {
        for (f, t, c) in matrix.entries() {
            sched.push_str(&alloc::format!(
                "{kf} {} {} {}\n",
                f.0,
                t.0,
                if *c { 1 } else { 0 }
            ));
        }
    }
    entries.push(("contact_schedule.txt".into(), sched.into_bytes()));
    let mut aff = String::new();
    for (x, y) in &bundle.affordance.pixels {
        aff.push_str(&alloc::format!("pixel {x} {y}\n"));
    }
    for p in &bundle.affordance.grasp_points {
        aff.push_str(&alloc::format!("grasp {:.9e} {:.9e} {:.9e}\n", p.x, p.y, p.z));
    }
    entries.push(("affordance.txt".into(), aff.into_bytes()));
    entries
}

pub fn cloud_to_xyz(cloud: &PointCloud) -> Vec<u8> {
    let mut s = String::new();
    for p in cloud.points() {
        s.push_str(&alloc::format!("{:.9e} {:.9e} {:.9e}\n", p.x, p.y, p.z));
    }
    s.into_bytes()
}

pub fn cloud_from_xyz(bytes: &[u8]) -> Result<PointCloud, SupervisionError> {
    let text = core::str::from_utf8(bytes)
        .map_err(|_| SupervisionError::BadPayload("cloud file is not UTF-8".into()))?;
    let mut points = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut it = line.split_whitespace();
        let mut next = || -> Result<f64, SupervisionError> {
            it.next()
                .ok_or_else(|| SupervisionError::BadPayload(alloc::format!("short line {ln}")))?
                .parse::<f64>()
                .map_err(|_| SupervisionError::BadPayload(alloc::format!("bad number, line {ln}")))
        };
        let (x, y, z) = (next()?, next()?, next()?);
        points.push(DVec3::new(x, y, z));
    }
    Ok(PointCloud::new(points))
}
