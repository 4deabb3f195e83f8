//! Extracts structured state from the guidance video: per-frame masks and
//! depth through provider contracts, 6-DoF pose estimation by render-and-
//! compare optimization, keyframe selection, contact schedules, and
//! hand-derived affordances.

use alloc::string::String;
use alloc::vec::Vec;

use glam::DVec3;
use thiserror::Error;

use crate::geometry::{
    backproject, CameraModel, DepthMap, GeometryError, ObjectId, PointCloud, Pose6D, SegMask,
    TriMesh,
};
use crate::imagination::{GuidanceVideo, ImaginationError, VideoSample, VideoScore};
use crate::optimize::{CmaState};
use crate::render::{render_mesh_depth, FrameObservation};
use crate::rng::Rng;
use crate::sim::{ContactMatrix, SceneConfig};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PerceptionError {
    #[error("provider transport failure: {0}")]
    Transport(String),
    #[error("configuration error: {0}")]
    Configuration(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("tracking lost for object {object} at frame {frame}")]
    TrackingLost { object: ObjectId, frame: usize },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Imagination(#[from] ImaginationError),
}

/// Silhouette term weight in the pose objective (unitless).
pub const POSE_W_SIL: f64 = 1.0;
/// Depth term weight (per meter).
pub const POSE_W_DEPTH: f64 = 10.0;
/// Initial search spread: position (m) and rotation (rad).
pub const POSE_SIGMA_POS: f64 = 0.02;
pub const POSE_SIGMA_ROT: f64 = 10.0 * core::f64::consts::PI / 180.0;
/// Objective evaluations per keyframe (split over two restarts).
pub const POSE_EVAL_BUDGET: usize = 1600;
/// A keyframe whose mask shrinks below this fraction of the frame-0 area is
/// treated as occluded: the previous pose is held and flagged unreliable.
pub const OCCLUSION_AREA_FRACTION: f64 = 0.25;
/// Affordance radius around fingertips, pixels at 256x256.
pub const AFFORDANCE_RADIUS_PX: f64 = 6.0;

/// Per-frame masks of one object across the whole video.
#[derive(Clone, Debug)]
pub struct MaskTrack {
    pub object: ObjectId,
    pub frames: Vec<SegMask>,
}

impl MaskTrack {
    pub fn mask_at(&self, frame: usize) -> &SegMask {
        &self.frames[frame]
    }
}

/// Per-frame completed depth; background pixels equal the initial ground
/// truth exactly.
#[derive(Clone, Debug)]
pub struct DepthTrack {
    pub frames: Vec<DepthMap>,
}

#[derive(Clone, Copy, Debug)]
pub struct PoseEstimate {
    pub pose: Pose6D,
    pub residual: f64,
    pub reliable: bool,
}

/// Estimated poses of one object at the retained keyframes.
#[derive(Clone, Debug)]
pub struct PoseTrack {
    pub object: ObjectId,
    pub keyframes: Vec<usize>,
    pub entries: Vec<PoseEstimate>,
}

/// Required (foreground, target) contacts at each retained keyframe.
#[derive(Clone, Debug)]
pub struct ContactSchedule {
    pub keyframes: Vec<usize>,
    pub matrices: Vec<ContactMatrix>,
}

impl ContactSchedule {
    pub fn empty(keyframes: Vec<usize>) -> Self {
        let matrices = keyframes.iter().map(|_| ContactMatrix::new(Vec::new())).collect();
        ContactSchedule { keyframes, matrices }
    }
}

/// Pixels near detected fingertips on the first interaction keyframe and
/// their backprojected grasp points on the actuator surface.
#[derive(Clone, Debug, Default)]
pub struct AffordanceRegion {
    pub pixels: Vec<(u32, u32)>,
    pub grasp_points: Vec<DVec3>,
}

impl AffordanceRegion {
    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }
}

/// Segmentation-tracking provider contract: given seed points sampled from
/// the object's initial ground-truth mask, return its mask in every frame.
pub trait SegmentationProvider {
    fn track_object(
        &self,
        video: &VideoSample,
        object: ObjectId,
        seed_points: &[(u32, u32)],
        initial: &FrameObservation,
    ) -> Result<MaskTrack, PerceptionError>;
}

/// Depth-completion provider contract: estimate foreground depth per frame,
/// conditioned on the known background depth.
pub trait DepthProvider {
    fn complete(
        &self,
        video: &VideoSample,
        masks: &[MaskTrack],
        initial: &FrameObservation,
    ) -> Result<Vec<DepthMap>, PerceptionError>;
}

/// Hand-keypoint provider contract: fingertip pixels in one frame, empty
/// when no hand is visible.
pub trait HandProvider {
    fn fingertips(
        &self,
        video: &VideoSample,
        frame: usize,
    ) -> Result<Vec<(u32, u32)>, PerceptionError>;
}

/// Vision-language provider contract for keyframe and contact questions.
pub trait InteractionProvider {
    /// (first interaction keyframe, goal keyframe), both members of
    /// `keyframes`.
    fn start_end(
        &self,
        video: &VideoSample,
        keyframes: &[usize],
    ) -> Result<(usize, usize), PerceptionError>;

    /// For each requested (foreground, target) pair: are they in contact at
    /// `frame`?
    fn contacts_at(
        &self,
        video: &VideoSample,
        frame: usize,
        pairs: &[(ObjectId, ObjectId)],
    ) -> Result<Vec<bool>, PerceptionError>;
}

/// Uniform-stride keyframe selection plus provider-chosen start/end, keeping
/// only keyframes inside [start, end].
pub fn select_keyframes<P: InteractionProvider + ?Sized>(
    sample: VideoSample,
    score: VideoScore,
    stride: usize,
    provider: &P,
) -> Result<GuidanceVideo, PerceptionError> {
    if stride == 0 {
        return Err(PerceptionError::Configuration("stride must be >= 1".into()));
    }
    let all: Vec<usize> = (0..sample.len()).step_by(stride).collect();
    let (start, end) = provider.start_end(&sample, &all)?;
    if start > end {
        return Err(PerceptionError::Protocol(alloc::format!(
            "provider returned start {start} after end {end}"
        )));
    }
    let retained: Vec<usize> = all.iter().copied().filter(|k| *k >= start && *k <= end).collect();
    if retained.len() < 2 {
        return Err(PerceptionError::Protocol(
            "fewer than two keyframes retained".into(),
        ));
    }
    GuidanceVideo::new(sample, score, retained, start, end).map_err(PerceptionError::from)
}

/// Default keyframe stride: video length / 8, at least 1.
pub fn default_stride(video_len: usize) -> usize {
    (video_len / 8).max(1)
}

/// Sample up to `count` seed points uniformly from the object's region in
/// the initial mask.
pub fn seed_points_from_mask(
    mask: &SegMask,
    object: ObjectId,
    count: usize,
    rng: &mut Rng,
) -> Result<Vec<(u32, u32)>, PerceptionError> {
    let mut pixels = Vec::new();
    for y in 0..mask.height() {
        for x in 0..mask.width() {
            if mask.label_at(x, y) == object {
                pixels.push((x, y));
            }
        }
    }
    if pixels.is_empty() {
        return Err(PerceptionError::Configuration(alloc::format!(
            "object {object} absent from the initial mask"
        )));
    }
    let mut out = Vec::with_capacity(count.min(pixels.len()));
    for _ in 0..count.min(pixels.len()) {
        out.push(pixels[rng.index(pixels.len())]);
    }
    Ok(out)
}

/// Track every foreground object across the video through the segmentation
/// provider, seeding each with points from its initial ground-truth mask.
pub fn track_masks<P: SegmentationProvider + ?Sized>(
    video: &GuidanceVideo,
    scene: &SceneConfig,
    initial: &FrameObservation,
    provider: &P,
    seed: u64,
) -> Result<Vec<MaskTrack>, PerceptionError> {
    let mut rng = Rng::seed_from(seed);
    let mut tracks = Vec::new();
    for id in scene.foreground_ids() {
        let points = seed_points_from_mask(&initial.seg, id, 16, &mut rng)?;
        let track = provider.track_object(&video.sample, id, &points, initial)?;
        if track.frames.len() != video.sample.len() {
            return Err(PerceptionError::Protocol(alloc::format!(
                "provider returned {} mask frames for a {}-frame video",
                track.frames.len(),
                video.sample.len()
            )));
        }
        tracks.push(track);
    }
    Ok(tracks)
}

/// Run the depth provider and enforce the background invariant: every pixel
/// not claimed by a foreground mask is overwritten with the initial
/// ground-truth depth, bitwise.
pub fn complete_depth<P: DepthProvider + ?Sized>(
    video: &GuidanceVideo,
    masks: &[MaskTrack],
    initial: &FrameObservation,
    provider: &P,
) -> Result<DepthTrack, PerceptionError> {
    let mut frames = provider.complete(&video.sample, masks, initial)?;
    if frames.len() != video.sample.len() {
        return Err(PerceptionError::Protocol(alloc::format!(
            "provider returned {} depth frames for a {}-frame video",
            frames.len(),
            video.sample.len()
        )));
    }
    for (f, depth) in frames.iter_mut().enumerate() {
        for y in 0..depth.height() {
            for x in 0..depth.width() {
                let foreground = masks
                    .iter()
                    .any(|t| t.frames[f].label_at(x, y) == t.object);
                if !foreground {
                    match initial.depth.get(x, y) {
                        Some(d) => depth.set(x, y, d),
                        None => depth.clear(x, y),
                    }
                }
            }
        }
    }
    Ok(DepthTrack { frames })
}

/// Pose-objective value: silhouette disagreement plus masked mean absolute
/// depth error of a candidate pose against the observed frame. Full-frame
/// reference path; the search uses the window-exact fast path below.
#[cfg_attr(not(test), allow(dead_code))]
fn pose_objective(
    mesh: &TriMesh,
    pose: &Pose6D,
    depth_obs: &DepthMap,
    mask_obs: &SegMask,
    label: ObjectId,
    cam: &CameraModel,
) -> f64 {
    let rendered = render_mesh_depth(mesh, pose, cam);
    let mut inter = 0usize;
    let mut union = 0usize;
    let mut depth_sum = 0.0;
    let mut depth_n = 0usize;
    for y in 0..cam.height {
        for x in 0..cam.width {
            let in_render = rendered.get(x, y);
            let in_obs = mask_obs.label_at(x, y) == label;
            match (in_render, in_obs) {
                (Some(dr), true) => {
                    inter += 1;
                    union += 1;
                    if let Some(dobs) = depth_obs.get(x, y) {
                        depth_sum += (dr - dobs).abs();
                        depth_n += 1;
                    }
                }
                (Some(_), false) | (None, true) => union += 1,
                (None, false) => {}
            }
        }
    }
    let iou = if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    };
    // disjoint silhouettes carry no depth signal: charge the scene-scale cap
    let depth_term = if depth_n == 0 {
        1.0
    } else {
        depth_sum / depth_n as f64
    };
    POSE_W_SIL * (1.0 - iou) + POSE_W_DEPTH * depth_term
}

/// What may legitimately hide the tracked object in a frame: the other
/// moving objects' observed masks, and the stationary scene surfaces known
/// from the initial ground-truth observation (hidden only when actually
/// nearer than the candidate surface).
#[derive(Clone, Copy, Default)]
pub struct Occluders<'a> {
    pub moving: Option<&'a SegMask>,
    pub static_scene: Option<(&'a SegMask, &'a DepthMap)>,
}

impl<'a> Occluders<'a> {
    #[inline]
    fn hides(&self, x: u32, y: u32, rendered_depth: f64) -> bool {
        if let Some(m) = self.moving {
            if !m.label_at(x, y).is_background() {
                return true;
            }
        }
        if let Some((seg, depth)) = self.static_scene {
            if !seg.label_at(x, y).is_background() {
                if let Some(d0) = depth.get(x, y) {
                    if d0 < rendered_depth {
                        return true;
                    }
                }
            }
        }
        false
    }
}

/// Same value as `pose_objective`, scanning only the rendered window.
/// `obs_count` is the observed mask's pixel count, computed once per fit.
/// Rendered pixels hidden by `occluders` count neither for nor against the
/// silhouette.
#[allow(clippy::too_many_arguments)]
fn pose_objective_windowed(
    mesh: &TriMesh,
    pose: &Pose6D,
    depth_obs: &DepthMap,
    mask_obs: &SegMask,
    label: ObjectId,
    cam: &CameraModel,
    obs_count: usize,
    occluders: &Occluders<'_>,
) -> f64 {
    let win = crate::render::render_mesh_depth_window(mesh, pose, cam);
    let mut rendered = 0usize;
    let mut inter = 0usize;
    let mut depth_sum = 0.0;
    let mut depth_n = 0usize;
    for dy in 0..win.height {
        for dx in 0..win.width {
            let d = win.depths[(dy * win.width + dx) as usize];
            if !d.is_finite() {
                continue;
            }
            let (x, y) = (win.x0 + dx, win.y0 + dy);
            if mask_obs.label_at(x, y) == label {
                rendered += 1;
                inter += 1;
                if let Some(dobs) = depth_obs.get(x, y) {
                    depth_sum += (d - dobs).abs();
                    depth_n += 1;
                }
            } else if !occluders.hides(x, y, d) {
                rendered += 1;
            }
        }
    }
    let union = obs_count + rendered - inter;
    let iou = if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    };
    let depth_term = if depth_n == 0 {
        1.0
    } else {
        depth_sum / depth_n as f64
    };
    POSE_W_SIL * (1.0 - iou) + POSE_W_DEPTH * depth_term
}

/// Estimate the 6-DoF pose aligning `mesh` with one observed depth+mask
/// frame, by a small CMA-ES search (position + axis-angle increment about
/// `init`). Returns the best pose with its final objective value.
pub fn estimate_pose(
    mesh: &TriMesh,
    depth_obs: &DepthMap,
    mask_obs: &SegMask,
    label: ObjectId,
    cam: &CameraModel,
    init: &Pose6D,
    seed: u64,
) -> Result<(Pose6D, f64), PerceptionError> {
    estimate_pose_with_budget(
        mesh,
        depth_obs,
        mask_obs,
        label,
        cam,
        init,
        seed,
        POSE_EVAL_BUDGET,
    )
}

/// Search settings for one pose fit.
#[derive(Clone, Copy, Debug)]
pub struct PoseSearch {
    pub budget: usize,
    pub sigma_pos: f64,
    pub sigma_rot: f64,
    pub lambda: usize,
    /// Independent CMA runs sharing the budget; the cheapest result wins.
    pub restarts: usize,
}

impl Default for PoseSearch {
    fn default() -> Self {
        PoseSearch {
            budget: POSE_EVAL_BUDGET,
            sigma_pos: POSE_SIGMA_POS,
            sigma_rot: POSE_SIGMA_ROT,
            lambda: 4 + (3.0 * libm::log(6.0)) as usize, // standard default, dim 6
            restarts: 2,
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub fn estimate_pose_with_budget(
    mesh: &TriMesh,
    depth_obs: &DepthMap,
    mask_obs: &SegMask,
    label: ObjectId,
    cam: &CameraModel,
    init: &Pose6D,
    seed: u64,
    budget: usize,
) -> Result<(Pose6D, f64), PerceptionError> {
    let search = PoseSearch {
        budget,
        ..PoseSearch::default()
    };
    estimate_pose_occluded(
        mesh,
        depth_obs,
        mask_obs,
        &Occluders::default(),
        label,
        cam,
        init,
        seed,
        &search,
    )
}

#[allow(clippy::too_many_arguments)]
pub fn estimate_pose_configured(
    mesh: &TriMesh,
    depth_obs: &DepthMap,
    mask_obs: &SegMask,
    label: ObjectId,
    cam: &CameraModel,
    init: &Pose6D,
    seed: u64,
    search: &PoseSearch,
) -> Result<(Pose6D, f64), PerceptionError> {
    estimate_pose_occluded(
        mesh,
        depth_obs,
        mask_obs,
        &Occluders::default(),
        label,
        cam,
        init,
        seed,
        search,
    )
}

/// Occlusion-aware variant: `occluders` carries whatever may hide the
/// object so hidden silhouette parts are not penalized.
#[allow(clippy::too_many_arguments)]
pub fn estimate_pose_occluded(
    mesh: &TriMesh,
    depth_obs: &DepthMap,
    mask_obs: &SegMask,
    occluders: &Occluders<'_>,
    label: ObjectId,
    cam: &CameraModel,
    init: &Pose6D,
    seed: u64,
    search: &PoseSearch,
) -> Result<(Pose6D, f64), PerceptionError> {
    if mask_obs.is_empty_for(label) {
        return Err(PerceptionError::TrackingLost {
            object: label,
            frame: 0,
        });
    }
    if !init.is_finite() {
        return Err(PerceptionError::Configuration("non-finite init pose".into()));
    }
    let scales = [
        search.sigma_pos,
        search.sigma_pos,
        search.sigma_pos,
        search.sigma_rot,
        search.sigma_rot,
        search.sigma_rot,
    ];
    let lambda = search.lambda.max(4);
    let decode = |v: &[f64]| -> Pose6D {
        init.with_increment(
            DVec3::new(v[0], v[1], v[2]),
            DVec3::new(v[3], v[4], v[5]),
        )
    };
    let obs_count = mask_obs.count_label(label);
    let mut best_pose = *init;
    let mut best_cost = pose_objective_windowed(
        mesh, init, depth_obs, mask_obs, label, cam, obs_count, occluders,
    );
    let restarts = search.restarts.max(1);
    let run_budget = search.budget / restarts;
    for restart in 0..restarts {
        let mut cma = CmaState::new(
            alloc::vec![0.0; 6],
            1.0,
            Some(&scales),
            lambda,
            seed.wrapping_add(restart as u64 * 0x9e37_79b9),
        )
        .expect("valid CMA setup");
        let mut evals = 1usize;
        let mut first_iteration = true;
        while evals + lambda <= run_budget + 1 {
            let mut cands = cma.ask();
            if first_iteration && restart == 0 {
                // evaluate the init itself as a population member so the
                // returned residual can never exceed the residual at init
                for c in cands[0].iter_mut() {
                    *c = 0.0;
                }
            }
            first_iteration = false;
            let costs: Vec<f64> = cands
                .iter()
                .map(|c| {
                    pose_objective_windowed(
                        mesh,
                        &decode(c),
                        depth_obs,
                        mask_obs,
                        label,
                        cam,
                        obs_count,
                        occluders,
                    )
                })
                .collect();
            evals += lambda;
            cma.tell(&cands, &costs).expect("finite costs");
            if let Some((v, c)) = cma.best() {
                if c < best_cost {
                    best_cost = c;
                    best_pose = decode(v);
                }
            }
        }
    }
    Ok((best_pose, best_cost))
}

/// Chain pose estimation over the retained keyframes for one rigid object,
/// initializing each keyframe at the previous estimate (frame 0 at the
/// ground-truth initial pose). Keyframes whose mask collapses below the
/// area threshold hold the previous pose; the other tracked objects and the
/// stationary scene (from the initial observation) act as occluders.
#[allow(clippy::too_many_arguments)]
pub fn track_poses(
    mesh: &TriMesh,
    object: ObjectId,
    video: &GuidanceVideo,
    masks: &MaskTrack,
    all_masks: &[MaskTrack],
    depths: &DepthTrack,
    initial: &FrameObservation,
    scene_static_ids: &[ObjectId],
    cam: &CameraModel,
    initial_pose: Pose6D,
    seed: u64,
) -> Result<PoseTrack, PerceptionError> {
    let reference_area = masks.frames[0].count_label(object);
    let mut entries = Vec::with_capacity(video.keyframes.len());
    let mut current = initial_pose;
    let search = PoseSearch::default();
    // stationary surfaces visible in the initial frame
    let static_seg = {
        let mut m = SegMask::new_background(cam.width, cam.height);
        let mut any = false;
        for y in 0..cam.height {
            for x in 0..cam.width {
                let l = initial.seg.label_at(x, y);
                if scene_static_ids.contains(&l) {
                    m.set_label(x, y, l);
                    any = true;
                }
            }
        }
        any.then_some(m)
    };
    for (i, &kf) in video.keyframes.iter().enumerate() {
        let mask = &masks.frames[kf];
        let area = mask.count_label(object);
        let occluded =
            reference_area > 0 && (area as f64) < OCCLUSION_AREA_FRACTION * reference_area as f64;
        if occluded {
            entries.push(PoseEstimate {
                pose: current,
                residual: f64::MAX.min(1e9),
                reliable: false,
            });
            continue;
        }
        let occluder_mask = composite_occluders(all_masks, object, kf, cam);
        let occluders = Occluders {
            moving: occluder_mask.as_ref(),
            static_scene: static_seg.as_ref().map(|s| (s, &initial.depth)),
        };
        match estimate_pose_occluded(
            mesh,
            &depths.frames[kf],
            mask,
            &occluders,
            object,
            cam,
            &current,
            seed.wrapping_add(i as u64),
            &search,
        ) {
            Ok((pose, residual)) => {
                current = pose;
                entries.push(PoseEstimate {
                    pose,
                    residual,
                    reliable: true,
                });
            }
            Err(PerceptionError::TrackingLost { object, .. }) => {
                return Err(PerceptionError::TrackingLost { object, frame: kf })
            }
            Err(e) => return Err(e),
        }
    }
    Ok(PoseTrack {
        object,
        keyframes: video.keyframes.clone(),
        entries,
    })
}

/// Union of every other object's observed mask at one frame (None when no
/// other track claims a pixel).
fn composite_occluders(
    all_masks: &[MaskTrack],
    exclude: ObjectId,
    frame: usize,
    cam: &CameraModel,
) -> Option<SegMask> {
    let others: Vec<&MaskTrack> = all_masks
        .iter()
        .filter(|t| t.object != exclude)
        .collect();
    if others.is_empty() {
        return None;
    }
    let mut out = SegMask::new_background(cam.width, cam.height);
    let mut any = false;
    for t in &others {
        let m = &t.frames[frame];
        for y in 0..cam.height {
            for x in 0..cam.width {
                if m.label_at(x, y) == t.object {
                    out.set_label(x, y, t.object);
                    any = true;
                }
            }
        }
    }
    any.then_some(out)
}

/// Centroid track of a blob object from its masks and completed depth,
/// used to initialize particle-velocity trajectories.
pub fn blob_centroid_track(
    masks: &MaskTrack,
    depths: &DepthTrack,
    cam: &CameraModel,
    keyframes: &[usize],
) -> Result<Vec<DVec3>, PerceptionError> {
    let mut out = Vec::with_capacity(keyframes.len());
    for &kf in keyframes {
        let cloud = backproject(&depths.frames[kf], &masks.frames[kf], masks.object, cam)?;
        match cloud.centroid() {
            Some(c) => out.push(c),
            None => {
                return Err(PerceptionError::TrackingLost {
                    object: masks.object,
                    frame: kf,
                })
            }
        }
    }
    Ok(out)
}

/// Ask the interaction provider for required contacts at every retained
/// keyframe.
pub fn extract_contacts<P: InteractionProvider + ?Sized>(
    video: &GuidanceVideo,
    scene: &SceneConfig,
    provider: &P,
) -> Result<ContactSchedule, PerceptionError> {
    let mut pairs = Vec::new();
    for f in scene.foreground_ids() {
        for t in scene.target_ids() {
            if f != t {
                pairs.push((f, t));
            }
        }
    }
    let mut matrices = Vec::with_capacity(video.keyframes.len());
    for &kf in &video.keyframes {
        let answers = provider.contacts_at(&video.sample, kf, &pairs)?;
        if answers.len() != pairs.len() {
            return Err(PerceptionError::Protocol(
                "contact provider returned wrong pair count".into(),
            ));
        }
        matrices.push(ContactMatrix::new(
            pairs
                .iter()
                .zip(&answers)
                .map(|((f, t), c)| (*f, *t, *c))
                .collect(),
        ));
    }
    Ok(ContactSchedule {
        keyframes: video.keyframes.clone(),
        matrices,
    })
}

/// Affordance extraction on the first interaction keyframe: pixels within
/// `AFFORDANCE_RADIUS_PX` of a fingertip, intersected with the actuator
/// mask, backprojected to 3D. An empty region is not an error.
pub fn detect_affordance<P: HandProvider + ?Sized>(
    video: &GuidanceVideo,
    actuator_mask: &SegMask,
    depth: &DepthMap,
    actuator: ObjectId,
    cam: &CameraModel,
    provider: &P,
) -> Result<AffordanceRegion, PerceptionError> {
    let tips = provider.fingertips(&video.sample, video.start)?;
    if tips.is_empty() {
        return Ok(AffordanceRegion::default());
    }
    let r2 = AFFORDANCE_RADIUS_PX * AFFORDANCE_RADIUS_PX;
    let mut pixels = Vec::new();
    let mut points = Vec::new();
    for y in 0..cam.height {
        for x in 0..cam.width {
            if actuator_mask.label_at(x, y) != actuator {
                continue;
            }
            let near = tips.iter().any(|(tx, ty)| {
                let dx = x as f64 - *tx as f64;
                let dy = y as f64 - *ty as f64;
                dx * dx + dy * dy <= r2
            });
            if near {
                pixels.push((x, y));
                if let Some(d) = depth.get(x, y) {
                    points.push(cam.backproject_pixel(x, y, d));
                }
            }
        }
    }
    Ok(AffordanceRegion {
        pixels,
        grasp_points: points,
    })
}

/// A point cloud of one object from an observed frame.
pub fn object_cloud(
    depth: &DepthMap,
    mask: &SegMask,
    object: ObjectId,
    cam: &CameraModel,
) -> Result<PointCloud, PerceptionError> {
    Ok(backproject(depth, mask, object, cam)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::render::{rasterize, RenderItem};
    use glam::DQuat;

    fn cam() -> CameraModel {
        CameraModel::look_at(
            220.0,
            220.0,
            128.0,
            128.0,
            DVec3::new(0.0, -0.55, 0.45),
            DVec3::new(0.0, 0.0, 0.04),
            DVec3::Z,
            256,
            256,
        )
        .unwrap()
    }

    fn render_box(mesh: &TriMesh, pose: &Pose6D, cam: &CameraModel) -> FrameObservation {
        rasterize(
            &[RenderItem::Mesh {
                mesh,
                pose: *pose,
                id: ObjectId(1),
            }],
            cam,
            false,
            0,
        )
    }

    #[test]
    fn pose_objective_is_zero_at_truth() {
        let cam = cam();
        let mesh = TriMesh::box_mesh(DVec3::new(0.04, 0.03, 0.02));
        let pose = Pose6D::from_translation(DVec3::new(0.0, 0.0, 0.02));
        let obs = render_box(&mesh, &pose, &cam);
        let f = pose_objective(&mesh, &pose, &obs.depth, &obs.seg, ObjectId(1), &cam);
        assert!(f < 1e-12, "objective at truth: {f}");
    }

    #[test]
    fn fixed_point_recovery_from_true_init() {
        let cam = cam();
        let mesh = TriMesh::box_mesh(DVec3::new(0.04, 0.03, 0.02));
        let pose = Pose6D::from_translation(DVec3::new(0.01, -0.02, 0.02));
        let obs = render_box(&mesh, &pose, &cam);
        let (got, residual) =
            estimate_pose(&mesh, &obs.depth, &obs.seg, ObjectId(1), &cam, &pose, 7).unwrap();
        assert!((got.position - pose.position).length() < 1e-6);
        assert!(residual < 1e-6);
    }

    #[test]
    fn recovers_from_perturbed_init() {
        let cam = cam();
        let mesh = TriMesh::box_mesh(DVec3::new(0.04, 0.03, 0.02));
        let truth = Pose6D::new(
            DVec3::new(0.02, 0.01, 0.02),
            DQuat::from_axis_angle(DVec3::Z, 0.3),
        );
        let obs = render_box(&mesh, &truth, &cam);
        // 3 cm / 10 degree perturbation
        let init = truth.with_increment(
            DVec3::new(0.02, -0.018, 0.012),
            DVec3::new(0.0, 0.1, 0.14),
        );
        let (got, _) =
            estimate_pose(&mesh, &obs.depth, &obs.seg, ObjectId(1), &cam, &init, 3).unwrap();
        let pos_err = (got.position - truth.position).length();
        let rot_err = got.rotation_to(&truth).length();
        assert!(pos_err < 0.005, "position error {pos_err}");
        assert!(rot_err < 2.0 * core::f64::consts::PI / 180.0, "rotation error {rot_err}");
    }

    #[test]
    fn empty_mask_is_tracking_lost() {
        let cam = cam();
        let mesh = TriMesh::box_mesh(DVec3::splat(0.02));
        let depth = DepthMap::new_invalid(256, 256);
        let mask = SegMask::new_background(256, 256);
        assert!(matches!(
            estimate_pose(&mesh, &depth, &mask, ObjectId(1), &cam, &Pose6D::IDENTITY, 1),
            Err(PerceptionError::TrackingLost { .. })
        ));
    }

    #[test]
    fn residual_never_exceeds_init_residual() {
        let cam = cam();
        let mesh = TriMesh::box_mesh(DVec3::new(0.04, 0.03, 0.02));
        let truth = Pose6D::from_translation(DVec3::new(0.0, 0.0, 0.02));
        let obs = render_box(&mesh, &truth, &cam);
        let init = truth.with_increment(DVec3::new(0.015, 0.01, -0.01), DVec3::ZERO);
        let at_init = pose_objective(&mesh, &init, &obs.depth, &obs.seg, ObjectId(1), &cam);
        let (_, residual) =
            estimate_pose(&mesh, &obs.depth, &obs.seg, ObjectId(1), &cam, &init, 11).unwrap();
        assert!(residual <= at_init);
    }

    #[test]
    fn windowed_objective_matches_full_frame() {
        let cam = cam();
        let mesh = TriMesh::box_mesh(DVec3::new(0.05, 0.03, 0.015));
        let truth = Pose6D::new(
            DVec3::new(0.02, 0.01, 0.015),
            DQuat::from_axis_angle(DVec3::Z, 0.4),
        );
        let obs = render_box(&mesh, &truth, &cam);
        let obs_count = obs.seg.count_label(ObjectId(1));
        let mut rng = crate::rng::Rng::seed_from(77);
        for _ in 0..40 {
            let pose = truth.with_increment(
                DVec3::new(rng.gauss(), rng.gauss(), rng.gauss()) * 0.02,
                DVec3::new(rng.gauss(), rng.gauss(), rng.gauss()) * 0.1,
            );
            let full = pose_objective(&mesh, &pose, &obs.depth, &obs.seg, ObjectId(1), &cam);
            let fast = pose_objective_windowed(
                &mesh, &pose, &obs.depth, &obs.seg, ObjectId(1), &cam, obs_count,
                &Occluders::default(),
            );
            // the reference path round-trips rendered depth through the f32
            // raster storage; the window path keeps f64
            assert!((full - fast).abs() < 1e-5, "{full} vs {fast}");
        }
    }

    #[test]
    fn keyframe_stride_and_bounds() {
        assert_eq!(default_stride(40), 5);
        assert_eq!(default_stride(7), 1);
    }

    #[test]
    fn seed_points_need_nonempty_mask() {
        let mask = SegMask::new_background(16, 16);
        let mut rng = Rng::seed_from(1);
        assert!(matches!(
            seed_points_from_mask(&mask, ObjectId(1), 8, &mut rng),
            Err(PerceptionError::Configuration(_))
        ));
    }
}
