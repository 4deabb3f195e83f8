//! Trajectory optimization loop: decode candidates, evaluate them by
//! simulated rollout against the supervision bundle, and return the
//! best-so-far trajectory ever evaluated (not the final mean).

use alloc::vec::Vec;

use glam::DVec3;
use thiserror::Error;

use crate::perception::PoseTrack;
use crate::sim::{
    rollout, MotionConstraint, SceneConfig, Shape, SimState, Trajectory, TrajectoryMotion,
};
use crate::supervision::{total_cost, CostBreakdown, CostWeights, SupervisionBundle};

use super::cma::{CmaError, CmaState};
use super::encode::{coordinate_scales, decode, dimension, EncodeError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OptimizeError {
    #[error(transparent)]
    Cma(#[from] CmaError),
    #[error(transparent)]
    Encode(#[from] EncodeError),
    #[error("invalid configuration: {0}")]
    Invalid(&'static str),
    #[error("optimization failed: every rollout diverged ({diverged} of {evaluated})")]
    AllDiverged { diverged: usize, evaluated: usize },
}

/// Cost charged to a candidate whose rollout diverged; above any reachable
/// valid cost under the default weights.
pub const DIVERGED_COST: f64 = 10.0;

/// Optimizer settings. The defaults mirror the engine's standard budget:
/// population 128 for 5 iterations (640 rollouts).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CmaConfig {
    pub population: usize,
    pub iterations: usize,
    /// Initial spread per coordinate block.
    pub sigma_pos: f64,
    pub sigma_rot: f64,
    pub sigma_vel: f64,
    pub seed: u64,
}

impl Default for CmaConfig {
    fn default() -> Self {
        CmaConfig {
            population: 128,
            iterations: 5,
            sigma_pos: 0.005,
            sigma_rot: 1.5 * core::f64::consts::PI / 180.0,
            sigma_vel: 0.01,
            seed: 0,
        }
    }
}

impl CmaConfig {
    pub fn validate(&self) -> Result<(), OptimizeError> {
        if self.population < 4 {
            return Err(OptimizeError::Invalid("population must be at least 4"));
        }
        if self.iterations == 0 {
            return Err(OptimizeError::Invalid("need at least one iteration"));
        }
        if !(self.sigma_pos > 0.0 && self.sigma_rot > 0.0 && self.sigma_vel > 0.0) {
            return Err(OptimizeError::Invalid("sigmas must be positive"));
        }
        Ok(())
    }
}

/// Outcome of evaluating one candidate trajectory.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum EvalOutcome {
    Scored(CostBreakdown),
    Diverged,
}

impl EvalOutcome {
    pub fn cost(&self) -> f64 {
        match self {
            EvalOutcome::Scored(b) => b.total,
            EvalOutcome::Diverged => DIVERGED_COST,
        }
    }
}

/// Evaluate one candidate: roll it out, record observations at every
/// retained keyframe, and score against the bundle.
pub fn evaluate_candidate(
    scene: &SceneConfig,
    bundle: &SupervisionBundle,
    weights: &CostWeights,
    traj: &Trajectory,
) -> EvalOutcome {
    let record_at: Vec<usize> = (0..traj.waypoint_count()).collect();
    let record = match rollout(scene, traj, &record_at) {
        Ok(r) => r,
        Err(_) => return EvalOutcome::Diverged,
    };
    let obs: Vec<_> = record.samples.iter().map(|s| s.obs.clone()).collect();
    let states: Vec<SimState> = record.samples.iter().map(|s| s.state.clone()).collect();
    match total_cost(&obs, &states, bundle, weights, scene) {
        Ok(breakdown) => EvalOutcome::Scored(breakdown),
        Err(_) => EvalOutcome::Diverged,
    }
}

/// Batch evaluation hook. Implementations must return outcomes in candidate
/// order; the companion crate provides a thread-parallel one.
pub trait CandidateEvaluator: Sync {
    fn evaluate_batch(
        &self,
        scene: &SceneConfig,
        bundle: &SupervisionBundle,
        weights: &CostWeights,
        candidates: &[Trajectory],
    ) -> Vec<EvalOutcome>;
}

/// In-process sequential evaluation.
pub struct SerialEvaluator;

impl CandidateEvaluator for SerialEvaluator {
    fn evaluate_batch(
        &self,
        scene: &SceneConfig,
        bundle: &SupervisionBundle,
        weights: &CostWeights,
        candidates: &[Trajectory],
    ) -> Vec<EvalOutcome> {
        candidates
            .iter()
            .map(|t| evaluate_candidate(scene, bundle, weights, t))
            .collect()
    }
}

/// One line of the cost-history log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalRecord {
    pub iteration: usize,
    pub candidate: usize,
    pub cost: f64,
    pub terms: Option<CostBreakdown>,
    pub diverged: bool,
}

#[derive(Clone, Debug)]
pub struct OptimizationResult {
    pub best: Trajectory,
    pub best_cost: f64,
    pub best_terms: Option<CostBreakdown>,
    pub history: Vec<EvalRecord>,
    pub evaluations: usize,
    pub repair_events: usize,
}

/// CMA-ES refinement of `init`. The zero increment (the initialization
/// itself) is injected as the first candidate of the first generation, so
/// the returned cost never exceeds the initialization's cost.
pub fn optimize_trajectory<E: CandidateEvaluator + ?Sized>(
    scene: &SceneConfig,
    bundle: &SupervisionBundle,
    init: &Trajectory,
    weights: &CostWeights,
    config: &CmaConfig,
    evaluator: &E,
) -> Result<OptimizationResult, OptimizeError> {
    config.validate()?;
    init.validate()
        .map_err(|_| OptimizeError::Invalid("invalid initialization trajectory"))?;
    let dim = dimension(init);
    let scales = coordinate_scales(init, config.sigma_pos, config.sigma_rot, config.sigma_vel);
    let mut cma = CmaState::new(
        alloc::vec![0.0; dim],
        1.0,
        Some(&scales),
        config.population,
        config.seed,
    )?;
    let mut history = Vec::with_capacity(config.population * config.iterations);
    let mut best: Option<(Trajectory, f64, Option<CostBreakdown>)> = None;
    let mut diverged_total = 0usize;
    for iteration in 0..config.iterations {
        let mut vectors = cma.ask();
        if iteration == 0 {
            for c in vectors[0].iter_mut() {
                *c = 0.0;
            }
        }
        let candidates: Vec<Trajectory> = vectors
            .iter()
            .map(|v| decode(v, init))
            .collect::<Result<_, _>>()?;
        let outcomes = evaluator.evaluate_batch(scene, bundle, weights, &candidates);
        debug_assert_eq!(outcomes.len(), candidates.len());
        let mut costs = Vec::with_capacity(outcomes.len());
        for (k, outcome) in outcomes.iter().enumerate() {
            let cost = outcome.cost();
            let (terms, diverged) = match outcome {
                EvalOutcome::Scored(b) => (Some(*b), false),
                EvalOutcome::Diverged => {
                    diverged_total += 1;
                    (None, true)
                }
            };
            history.push(EvalRecord {
                iteration,
                candidate: k,
                cost,
                terms,
                diverged,
            });
            let better = best.as_ref().map(|(_, c, _)| cost < *c).unwrap_or(true);
            if !diverged && better {
                best = Some((candidates[k].clone(), cost, terms));
            }
            costs.push(cost);
        }
        cma.tell(&vectors, &costs)?;
    }
    let evaluations = history.len();
    match best {
        Some((traj, cost, terms)) => Ok(OptimizationResult {
            best: traj,
            best_cost: cost,
            best_terms: terms,
            history,
            evaluations,
            repair_events: cma.repair_events(),
        }),
        None => Err(OptimizeError::AllDiverged {
            diverged: diverged_total,
            evaluated: evaluations,
        }),
    }
}

/// Rigid trajectory from an estimated pose track (one waypoint per retained
/// keyframe).
pub fn initial_trajectory_from_track(
    track: &PoseTrack,
    segment_duration: f64,
) -> Result<Trajectory, OptimizeError> {
    let wps: Vec<_> = track.entries.iter().map(|e| e.pose).collect();
    Trajectory::new(TrajectoryMotion::Rigid(wps), segment_duration)
        .map_err(|_| OptimizeError::Invalid("pose track too short for a trajectory"))
}

/// Scalar trajectory for a constrained actuator, extracted from a pose
/// track by projecting each estimated pose onto the DOF.
pub fn scalar_trajectory_from_track(
    track: &PoseTrack,
    scene: &SceneConfig,
    segment_duration: f64,
) -> Result<Trajectory, OptimizeError> {
    let spec = scene.actuator();
    let values: Vec<f64> = track
        .entries
        .iter()
        .map(|e| match spec.constraint {
            MotionConstraint::Hinge { axis, .. } => {
                spec.initial_pose.rotation_to(&e.pose).dot(axis)
            }
            MotionConstraint::Prismatic { axis, .. } => {
                (e.pose.position - spec.initial_pose.position).dot(axis)
            }
            _ => 0.0,
        })
        .collect();
    Trajectory::new(TrajectoryMotion::Scalar(values), segment_duration)
        .map_err(|_| OptimizeError::Invalid("pose track too short for a trajectory"))
}

/// Refine particle-velocity waypoints so the *simulated* blob reproduces the
/// observed centroid track: roll the candidate out, measure the simulated
/// centroids with the same visible-surface backprojection the video
/// measurement used, and correct each segment velocity by the per-segment
/// centroid-delta error. A few fixed-point rounds cancel the systematic
/// offset between commanded (actuated-subset) motion and whole-blob motion.
pub fn refine_velocity_init(
    scene: &SceneConfig,
    blob_id: crate::geometry::ObjectId,
    video_centroids: &[DVec3],
    start: DVec3,
    init: &Trajectory,
    rounds: usize,
    selection: Option<(&SupervisionBundle, &CostWeights)>,
) -> Trajectory {
    let TrajectoryMotion::ParticleVelocity(mut velocities) = init.motion.clone() else {
        return init.clone();
    };
    let dur = init.segment_duration;
    let record_at: Vec<usize> = (0..velocities.len()).collect();
    // damped fixed-point iteration; keep the round with the smallest total
    // centroid deviation in case the correction rings
    const GAIN: f64 = 0.5;
    let mut best = velocities.clone();
    let mut best_err = f64::INFINITY;
    for _ in 0..rounds {
        let candidate = Trajectory {
            motion: TrajectoryMotion::ParticleVelocity(velocities.clone()),
            segment_duration: dur,
        };
        let Ok(record) = rollout(scene, &candidate, &record_at) else {
            break;
        };
        let mut sim_centroids = Vec::with_capacity(record.samples.len());
        for s in &record.samples {
            let cloud = crate::geometry::backproject(
                &s.obs.depth,
                &s.obs.seg,
                blob_id,
                &s.obs.camera,
            );
            match cloud.ok().and_then(|c| c.centroid()) {
                Some(c) => sim_centroids.push(c),
                None => {
                    return Trajectory {
                        motion: TrajectoryMotion::ParticleVelocity(best),
                        segment_duration: dur,
                    }
                }
            }
        }
        if sim_centroids.len() != video_centroids.len() {
            break;
        }
        // rank rounds by the true supervision cost when a bundle is
        // available (centroid error is a biased proxy), else by centroid fit
        let err = match selection {
            Some((bundle, weights)) => {
                let obs: alloc::vec::Vec<_> =
                    record.samples.iter().map(|s| s.obs.clone()).collect();
                let states: alloc::vec::Vec<_> =
                    record.samples.iter().map(|s| s.state.clone()).collect();
                match total_cost(&obs, &states, bundle, weights, scene) {
                    Ok(b) => b.total,
                    Err(_) => f64::INFINITY,
                }
            }
            None => video_centroids
                .iter()
                .zip(&sim_centroids)
                .map(|(a, b)| (*a - *b).length())
                .sum(),
        };
        if err < best_err {
            best_err = err;
            best = velocities.clone();
        }
        let mut prev_video = start;
        let mut prev_sim = start;
        for (k, (cv, cs)) in video_centroids.iter().zip(&sim_centroids).enumerate() {
            let want = (*cv - prev_video) / dur;
            let got = (*cs - prev_sim) / dur;
            velocities[k] += (want - got) * GAIN;
            prev_video = *cv;
            prev_sim = *cs;
        }
    }
    Trajectory {
        motion: TrajectoryMotion::ParticleVelocity(best),
        segment_duration: dur,
    }
}

/// Particle-velocity trajectory from a blob centroid track: the velocity of
/// segment k carries the centroid from keyframe k-1 to keyframe k.
pub fn velocity_trajectory_from_centroids(
    start: DVec3,
    centroids: &[DVec3],
    segment_duration: f64,
) -> Result<Trajectory, OptimizeError> {
    if centroids.len() < 2 {
        return Err(OptimizeError::Invalid("need at least two centroids"));
    }
    let mut velocities = Vec::with_capacity(centroids.len());
    let mut prev = start;
    for c in centroids {
        velocities.push((*c - prev) / segment_duration);
        prev = *c;
    }
    Trajectory::new(TrajectoryMotion::ParticleVelocity(velocities), segment_duration)
        .map_err(|_| OptimizeError::Invalid("invalid velocity trajectory"))
}

/// The no-init ablation start: zero displacement for `count` waypoints,
/// matching the actuator's trajectory kind.
pub fn zero_displacement_trajectory(
    scene: &SceneConfig,
    count: usize,
    segment_duration: f64,
) -> Result<Trajectory, OptimizeError> {
    if count < 2 {
        return Err(OptimizeError::Invalid("need at least two waypoints"));
    }
    let actuator = scene.actuator();
    let motion = match (&actuator.shape, actuator.constraint) {
        (Shape::Mesh(_), MotionConstraint::Free) => {
            TrajectoryMotion::Rigid(alloc::vec![actuator.initial_pose; count])
        }
        (Shape::Mesh(_), MotionConstraint::Hinge { .. })
        | (Shape::Mesh(_), MotionConstraint::Prismatic { .. }) => {
            TrajectoryMotion::Scalar(alloc::vec![0.0; count])
        }
        (Shape::Blob(_), _) => {
            TrajectoryMotion::ParticleVelocity(alloc::vec![DVec3::ZERO; count])
        }
        _ => return Err(OptimizeError::Invalid("unsupported actuator kind")),
    };
    Trajectory::new(motion, segment_duration)
        .map_err(|_| OptimizeError::Invalid("invalid zero trajectory"))
}
