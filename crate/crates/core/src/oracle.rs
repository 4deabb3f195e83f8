//! Offline stand-in for generative and perception services: demonstration
//! scripts shipped with each desk task are executed with idealized
//! (kinematic) actuation, rendered into a video, and corrupted with a
//! seed-controlled noise model (mask erosion/dilation, multiplicative depth
//! noise, waypoint pose jitter). Every provider trait of the pipeline is
//! implemented on top of the synthesized video, so a full run touches no
//! network.

use alloc::rc::Rc;
use alloc::string::String;
use alloc::vec::Vec;

use core::cell::RefCell;

use glam::{DVec3};

use crate::geometry::{DepthMap, ObjectId, SegMask};
use crate::imagination::{
    template_prompt, ImaginationError, VideoGenerator, VideoSample, VideoScore, VideoVerifier,
};
use crate::perception::{
    DepthProvider, HandProvider, InteractionProvider, MaskTrack, PerceptionError,
    SegmentationProvider,
};
use crate::render::{ColorImage, FrameObservation};
use crate::rng::Rng;
use crate::sim::{
    contacts, video_rollout, SceneConfig, Shape, SimState, Trajectory, TrajectoryMotion,
};

/// Rubric labels and keyframe annotations carried by a script variant.
#[derive(Clone, Debug, PartialEq)]
pub struct ScriptLabels {
    pub match_description: u8,
    pub hand_motion: u8,
    pub goal_reached: u8,
    pub new_object: bool,
    /// Whether policy learning from this variant is expected to succeed.
    pub usable: bool,
    /// First-interaction and goal keyframes (frame indices).
    pub start_frame: usize,
    pub end_frame: usize,
    /// Labeled grasp pixels on the start keyframe (hand stand-in).
    pub grasp_pixels: Vec<(u32, u32)>,
}

/// One demonstration variant: a waypoint sequence plus its labels.
#[derive(Clone, Debug)]
pub struct ScriptVariant {
    pub tag: String,
    pub trajectory: Trajectory,
    pub labels: ScriptLabels,
}

/// The per-task oracle script: the ground-truth demonstration first,
/// optional failure variants after it.
#[derive(Clone, Debug)]
pub struct DemoScript {
    pub variants: Vec<ScriptVariant>,
    pub frames_per_segment: usize,
}

impl DemoScript {
    pub fn success(&self) -> &ScriptVariant {
        &self.variants[0]
    }

    /// Expected video length for a variant of this script.
    pub fn video_len(&self, variant: usize) -> usize {
        self.variants[variant].trajectory.waypoint_count() * self.frames_per_segment + 1
    }
}

/// Seed-controlled corruption emulating generative-video artifacts.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseModel {
    /// Master scale; 0 disables all corruption.
    pub level: f64,
    /// Mask boundary erosion/dilation radius is drawn from {0, .., max}.
    pub mask_radius_max: i32,
    /// Per-frame multiplicative depth noise bound (fraction).
    pub depth_frac: f64,
    /// Actuator waypoint jitter (m, rad).
    pub pos_sigma: f64,
    pub rot_sigma: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        NoiseModel {
            level: 1.0,
            mask_radius_max: 2,
            depth_frac: 0.05,
            pos_sigma: 0.005,
            rot_sigma: 2.0 * core::f64::consts::PI / 180.0,
        }
    }
}

impl NoiseModel {
    pub fn off() -> Self {
        NoiseModel {
            level: 0.0,
            ..NoiseModel::default()
        }
    }

    pub fn with_level(level: f64) -> Self {
        NoiseModel {
            level,
            ..NoiseModel::default()
        }
    }

    fn active(&self) -> bool {
        self.level > 0.0
    }
}

/// Fully synthesized imagined video plus the per-frame data the perception
/// providers hand out.
#[derive(Clone, Debug)]
pub struct SynthVideo {
    pub variant: usize,
    pub frames: Vec<ColorImage>,
    pub states: Vec<SimState>,
    /// Noisy per-object masks, indexed like `scene.foreground_ids()`.
    pub masks: Vec<MaskTrack>,
    /// Noisy full-frame depth per frame.
    pub depth: Vec<DepthMap>,
}

/// Sample seeds carry the candidate ordinal in the low byte so that every
/// provider can re-derive the variant and noise stream statelessly.
fn compose_seed(base: u64, ordinal: usize) -> u64 {
    base.wrapping_mul(256).wrapping_add(ordinal as u64 & 0xff)
}

fn seed_ordinal(seed: u64) -> usize {
    (seed & 0xff) as usize
}

/// Offline provider backing every pipeline stage from a demo script.
///
/// Synthesis is deterministic per sample seed; the most recent synthesis is
/// cached. The cache makes the provider single-threaded (serial contract);
/// spawn one provider per thread when running tasks concurrently.
pub struct OracleProvider {
    pub scene: SceneConfig,
    pub script: DemoScript,
    pub noise: NoiseModel,
    cache: RefCell<Option<(u64, Rc<SynthVideo>)>>,
}

impl OracleProvider {
    pub fn new(scene: SceneConfig, script: DemoScript, noise: NoiseModel) -> Self {
        OracleProvider {
            scene,
            script,
            noise,
            cache: RefCell::new(None),
        }
    }

    fn variant_for_seed(&self, seed: u64) -> usize {
        seed_ordinal(seed) % self.script.variants.len()
    }

    /// Jitter a trajectory's waypoints with the pose-noise model.
    fn jitter_trajectory(&self, traj: &Trajectory, rng: &mut Rng) -> Trajectory {
        if !self.noise.active() {
            return traj.clone();
        }
        let level = self.noise.level;
        let motion = match &traj.motion {
            TrajectoryMotion::Rigid(wps) => TrajectoryMotion::Rigid(
                wps.iter()
                    .map(|p| {
                        let dpos = DVec3::new(rng.gauss(), rng.gauss(), rng.gauss())
                            * (self.noise.pos_sigma * level);
                        let drot = DVec3::new(rng.gauss(), rng.gauss(), rng.gauss())
                            * (self.noise.rot_sigma * level / libm::sqrt(3.0));
                        p.with_increment(dpos, drot)
                    })
                    .collect(),
            ),
            TrajectoryMotion::Scalar(wps) => TrajectoryMotion::Scalar(
                wps.iter()
                    .map(|q| q + rng.gauss() * self.noise.rot_sigma * level)
                    .collect(),
            ),
            TrajectoryMotion::ParticleVelocity(wps) => TrajectoryMotion::ParticleVelocity(
                wps.iter()
                    .map(|v| {
                        *v + DVec3::new(rng.gauss(), rng.gauss(), rng.gauss())
                            * (self.noise.pos_sigma * level / traj.segment_duration)
                    })
                    .collect(),
            ),
        };
        Trajectory {
            motion,
            segment_duration: traj.segment_duration,
        }
    }

    /// Deterministically synthesize (or fetch) the video for a sample seed.
    pub fn synth(&self, seed: u64) -> Result<Rc<SynthVideo>, ImaginationError> {
        if let Some((cached_seed, video)) = self.cache.borrow().as_ref() {
            if *cached_seed == seed {
                return Ok(video.clone());
            }
        }
        let variant_idx = self.variant_for_seed(seed);
        let variant = &self.script.variants[variant_idx];
        let mut rng = Rng::seed_from(seed ^ NOISE_STREAM_SALT);
        let traj = self.jitter_trajectory(&variant.trajectory, &mut rng);
        let rollout = video_rollout(&self.scene, &traj, self.script.frames_per_segment, true)
            .map_err(|e| ImaginationError::Configuration(alloc::format!(
                "oracle script rollout failed: {e}"
            )))?;
        let mut frames = Vec::with_capacity(rollout.len());
        let mut states = Vec::with_capacity(rollout.len());
        let mut gt_segs: Vec<SegMask> = Vec::with_capacity(rollout.len());
        let mut depth = Vec::with_capacity(rollout.len());
        for (state, obs) in rollout {
            frames.push(obs.color.clone().expect("color requested"));
            states.push(state);
            // per-frame multiplicative depth noise
            let eps = if self.noise.active() {
                rng.uniform_in(-self.noise.depth_frac, self.noise.depth_frac) * self.noise.level
            } else {
                0.0
            };
            depth.push(obs.depth.scaled(1.0 + eps));
            gt_segs.push(obs.seg);
        }
        // noisy per-object mask tracks
        let mut masks = Vec::new();
        for id in self.scene.foreground_ids() {
            let mut track_frames = Vec::with_capacity(gt_segs.len());
            for seg in &gt_segs {
                let isolated = seg.isolate(id);
                let noisy = if self.noise.active() {
                    let r = rng.index(self.noise.mask_radius_max as usize + 1) as i32;
                    let sign = if rng.uniform() < 0.5 { -1 } else { 1 };
                    isolated.morph_label(id, sign * r)
                } else {
                    isolated
                };
                track_frames.push(noisy);
            }
            masks.push(MaskTrack {
                object: id,
                frames: track_frames,
            });
        }
        let video = Rc::new(SynthVideo {
            variant: variant_idx,
            frames,
            states,
            masks,
            depth,
        });
        *self.cache.borrow_mut() = Some((seed, video.clone()));
        Ok(video)
    }

    fn labels_for(&self, seed: u64) -> &ScriptLabels {
        &self.script.variants[self.variant_for_seed(seed)].labels
    }
}

/// Separates the oracle's noise stream from other users of the same seed.
const NOISE_STREAM_SALT: u64 = 0x6f72_6163_6c65_5f31;

impl VideoGenerator for OracleProvider {
    fn rewrite_prompt(
        &self,
        description: &str,
        scene: &SceneConfig,
    ) -> Result<String, ImaginationError> {
        template_prompt(description, scene)
    }

    fn generate(
        &self,
        prompt: &str,
        _initial: &FrameObservation,
        n: usize,
        seed: u64,
    ) -> Result<Vec<VideoSample>, ImaginationError> {
        if n == 0 {
            return Err(ImaginationError::Validation("need at least one sample"));
        }
        if self.script.variants.is_empty() {
            return Err(ImaginationError::Configuration(
                "oracle script has no variants".into(),
            ));
        }
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let sample_seed = compose_seed(seed, i);
            let synth = self.synth(sample_seed)?;
            out.push(VideoSample::new(
                synth.frames.clone(),
                prompt.into(),
                alloc::format!("oracle:{}", self.script.variants[synth.variant].tag),
                sample_seed,
            )?);
        }
        Ok(out)
    }
}

impl VideoVerifier for OracleProvider {
    fn verify(
        &self,
        sample: &VideoSample,
        _description: &str,
    ) -> Result<VideoScore, ImaginationError> {
        let l = self.labels_for(sample.seed);
        VideoScore::new(l.match_description, l.hand_motion, l.goal_reached, l.new_object)
    }
}

impl SegmentationProvider for OracleProvider {
    fn track_object(
        &self,
        video: &VideoSample,
        object: ObjectId,
        _seed_points: &[(u32, u32)],
        _initial: &FrameObservation,
    ) -> Result<MaskTrack, PerceptionError> {
        let synth = self
            .synth(video.seed)
            .map_err(|e| PerceptionError::Configuration(alloc::format!("{e}")))?;
        synth
            .masks
            .iter()
            .find(|t| t.object == object)
            .cloned()
            .ok_or_else(|| {
                PerceptionError::Configuration(alloc::format!(
                    "object {object} is not a tracked foreground object"
                ))
            })
    }
}

impl DepthProvider for OracleProvider {
    fn complete(
        &self,
        video: &VideoSample,
        _masks: &[MaskTrack],
        _initial: &FrameObservation,
    ) -> Result<Vec<DepthMap>, PerceptionError> {
        let synth = self
            .synth(video.seed)
            .map_err(|e| PerceptionError::Configuration(alloc::format!("{e}")))?;
        Ok(synth.depth.clone())
    }
}

impl HandProvider for OracleProvider {
    fn fingertips(
        &self,
        video: &VideoSample,
        frame: usize,
    ) -> Result<Vec<(u32, u32)>, PerceptionError> {
        let labels = self.labels_for(video.seed);
        if frame == labels.start_frame {
            Ok(labels.grasp_pixels.clone())
        } else {
            Ok(Vec::new())
        }
    }
}

impl InteractionProvider for OracleProvider {
    fn start_end(
        &self,
        video: &VideoSample,
        keyframes: &[usize],
    ) -> Result<(usize, usize), PerceptionError> {
        let labels = self.labels_for(video.seed);
        if !keyframes.contains(&labels.start_frame) || !keyframes.contains(&labels.end_frame) {
            return Err(PerceptionError::Protocol(alloc::format!(
                "script start/end ({}, {}) not in the keyframe set",
                labels.start_frame,
                labels.end_frame
            )));
        }
        Ok((labels.start_frame, labels.end_frame))
    }

    fn contacts_at(
        &self,
        video: &VideoSample,
        frame: usize,
        pairs: &[(ObjectId, ObjectId)],
    ) -> Result<Vec<bool>, PerceptionError> {
        let synth = self
            .synth(video.seed)
            .map_err(|e| PerceptionError::Configuration(alloc::format!("{e}")))?;
        let state = synth.states.get(frame).ok_or_else(|| {
            PerceptionError::Protocol(alloc::format!("frame {frame} outside the video"))
        })?;
        let matrix = contacts(state, &self.scene);
        Ok(pairs
            .iter()
            .map(|(f, t)| matrix.get(*f, *t).unwrap_or(false))
            .collect())
    }
}

/// Ground-truth initial-pose lookup for rigid foreground objects (the
/// pipeline exploits known initial state for tracking initialization).
pub fn initial_pose_of(scene: &SceneConfig, object: ObjectId) -> Option<crate::geometry::Pose6D> {
    scene.object(object).and_then(|o| match o.shape {
        Shape::Mesh(_) => Some(o.initial_pose),
        Shape::Blob(_) => None,
    })
}
