//! End-to-end orchestration: generate and select the guidance video, extract
//! the supervision bundle, optimize the trajectory, execute it, and report.
//! Every stage writes its artifacts under the output directory and can be
//! resumed from them.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::rc::Rc;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use reverie_core::geometry::{backproject, ObjectId};
use reverie_core::imagination::{
    rejection_sample, GuidanceVideo, ImaginationError, VideoGenerator, VideoSample, VideoScore,
    VideoVerifier,
};
use reverie_core::optimize::{
    initial_trajectory_from_track, optimize_trajectory, refine_velocity_init,
    scalar_trajectory_from_track, velocity_trajectory_from_centroids,
    zero_displacement_trajectory, CandidateEvaluator, EvalRecord, OptimizeError,
    SerialEvaluator,
};
use reverie_core::oracle::{NoiseModel, OracleProvider};
use reverie_core::perception::{
    blob_centroid_track, complete_depth, default_stride, detect_affordance, extract_contacts,
    select_keyframes, track_masks, track_poses, DepthProvider, HandProvider, InteractionProvider,
    PerceptionError, SegmentationProvider,
};
use reverie_core::render::FrameObservation;
use reverie_core::sim::{
    render_state, rollout, MotionConstraint, Shape, SimState, Trajectory,
};
use reverie_core::supervision::SupervisionBundle;
use reverie_core::task::{evaluate_success, TaskDefinition};

use crate::formats::{
    cost_log_to_string, read_bundle, read_ppm, trajectory_from_string, trajectory_to_string,
    write_bundle, write_depth, write_mask, write_ppm,
};
use crate::parallel::ParallelEvaluator;
use crate::providers::{RemoteEndpoints, RemoteProvider};
use crate::report::{depth_to_ppm, seg_to_ppm};
use crate::taskfile::load_task;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("task file {0} cannot be read: {1}")]
    MissingTask(PathBuf, String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(String),
    #[error("provider failure: {0}")]
    Provider(String),
    #[error("all candidate videos rejected: {0}")]
    AllRejected(String),
    #[error("optimization failed: {0}")]
    OptimizationFailed(String),
}

impl PipelineError {
    /// CLI exit codes: 0 success, 1 optimization failed, 2 configuration
    /// error, 3 provider/transport error.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::OptimizationFailed(_) => 1,
            PipelineError::MissingTask(..) | PipelineError::Config(_) | PipelineError::Io(_) => 2,
            PipelineError::Provider(_) | PipelineError::AllRejected(_) => 3,
        }
    }
}

fn map_imagination(e: ImaginationError) -> PipelineError {
    match e {
        ImaginationError::Transport { .. } => PipelineError::Provider(e.to_string()),
        ImaginationError::AllRejected { .. } => PipelineError::AllRejected(e.to_string()),
        ImaginationError::Configuration(_) => PipelineError::Config(e.to_string()),
        other => PipelineError::Provider(other.to_string()),
    }
}

fn map_perception(e: PerceptionError) -> PipelineError {
    match e {
        PerceptionError::Transport(_) => PipelineError::Provider(e.to_string()),
        PerceptionError::Configuration(_) => PipelineError::Config(e.to_string()),
        other => PipelineError::Provider(other.to_string()),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProviderKind {
    Oracle,
    Remote,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Ablation {
    NoInit,
    NoContact,
}

#[derive(Clone, Debug)]
pub struct RunOptions {
    pub task_path: PathBuf,
    pub provider: ProviderKind,
    pub seed: u64,
    pub resume: bool,
    pub jobs: Option<usize>,
    pub ablate: Option<Ablation>,
    pub noise: f64,
    pub out_dir: PathBuf,
}

impl RunOptions {
    pub fn new(task_path: impl Into<PathBuf>, out_dir: impl Into<PathBuf>) -> Self {
        RunOptions {
            task_path: task_path.into(),
            provider: ProviderKind::Oracle,
            seed: 0,
            resume: false,
            jobs: None,
            ablate: None,
            noise: 1.0,
            out_dir: out_dir.into(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub status: String,
    pub detail: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub seed: u64,
    pub total: u8,
    pub accepted: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize, Default)]
pub struct VideoRecord {
    pub seed: u64,
    pub score_total: u8,
    pub match_description: u8,
    pub hand_motion: u8,
    pub goal_reached: u8,
    pub new_object: bool,
    pub keyframes: Vec<usize>,
    pub start: usize,
    pub end: usize,
    pub rejected: usize,
    pub candidates: Vec<CandidateRecord>,
}

#[derive(Clone, Debug, Serialize, Deserialize, Default)]
pub struct ResultRecord {
    pub best_cost: f64,
    pub act_iou: f64,
    pub tar_iou: f64,
    pub act_cd: f64,
    pub tar_cd: f64,
    pub contact: f64,
    pub evaluations: usize,
    pub repair_events: usize,
    pub success: bool,
    pub success_metric: f64,
    pub init_cost: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub task_file: String,
    pub task_name: String,
    pub provider: String,
    pub seed: u64,
    pub noise: f64,
    pub ablate: Option<String>,
    pub stages: Vec<StageRecord>,
    pub artifacts: BTreeMap<String, String>,
    pub video: VideoRecord,
    pub result: ResultRecord,
    pub started_at: u64,
    pub finished_at: u64,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<RunManifest, PipelineError> {
        let text = fs::read_to_string(path)
            .map_err(|e| PipelineError::Io(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))
    }
}

/// All provider roles the pipeline needs, as trait objects.
pub struct ProviderSet {
    pub generator: Box<dyn VideoGenerator>,
    pub verifier: Box<dyn VideoVerifier>,
    pub segmentation: Box<dyn SegmentationProvider>,
    pub depth: Box<dyn DepthProvider>,
    pub hand: Box<dyn HandProvider>,
    pub interaction: Box<dyn InteractionProvider>,
}

/// Delegating wrapper so one oracle (and its synthesis cache) backs every
/// provider role.
struct SharedOracle(Rc<OracleProvider>);

impl VideoGenerator for SharedOracle {
    fn rewrite_prompt(
        &self,
        description: &str,
        scene: &reverie_core::sim::SceneConfig,
    ) -> Result<String, ImaginationError> {
        self.0.rewrite_prompt(description, scene)
    }
    fn generate(
        &self,
        prompt: &str,
        initial: &FrameObservation,
        n: usize,
        seed: u64,
    ) -> Result<Vec<VideoSample>, ImaginationError> {
        self.0.generate(prompt, initial, n, seed)
    }
}

impl VideoVerifier for SharedOracle {
    fn verify(
        &self,
        sample: &VideoSample,
        description: &str,
    ) -> Result<VideoScore, ImaginationError> {
        self.0.verify(sample, description)
    }
}

impl SegmentationProvider for SharedOracle {
    fn track_object(
        &self,
        video: &VideoSample,
        object: ObjectId,
        seed_points: &[(u32, u32)],
        initial: &FrameObservation,
    ) -> Result<reverie_core::perception::MaskTrack, PerceptionError> {
        self.0.track_object(video, object, seed_points, initial)
    }
}

impl DepthProvider for SharedOracle {
    fn complete(
        &self,
        video: &VideoSample,
        masks: &[reverie_core::perception::MaskTrack],
        initial: &FrameObservation,
    ) -> Result<Vec<reverie_core::geometry::DepthMap>, PerceptionError> {
        self.0.complete(video, masks, initial)
    }
}

impl HandProvider for SharedOracle {
    fn fingertips(
        &self,
        video: &VideoSample,
        frame: usize,
    ) -> Result<Vec<(u32, u32)>, PerceptionError> {
        self.0.fingertips(video, frame)
    }
}

impl InteractionProvider for SharedOracle {
    fn start_end(
        &self,
        video: &VideoSample,
        keyframes: &[usize],
    ) -> Result<(usize, usize), PerceptionError> {
        self.0.start_end(video, keyframes)
    }
    fn contacts_at(
        &self,
        video: &VideoSample,
        frame: usize,
        pairs: &[(ObjectId, ObjectId)],
    ) -> Result<Vec<bool>, PerceptionError> {
        self.0.contacts_at(video, frame, pairs)
    }
}

pub fn oracle_provider_set(task: &TaskDefinition, noise: f64) -> ProviderSet {
    let oracle = Rc::new(OracleProvider::new(
        task.scene.clone(),
        task.script.clone(),
        NoiseModel::with_level(noise),
    ));
    ProviderSet {
        generator: Box::new(SharedOracle(oracle.clone())),
        verifier: Box::new(SharedOracle(oracle.clone())),
        segmentation: Box::new(SharedOracle(oracle.clone())),
        depth: Box::new(SharedOracle(oracle.clone())),
        hand: Box::new(SharedOracle(oracle.clone())),
        interaction: Box::new(SharedOracle(oracle)),
    }
}

pub fn remote_provider_set() -> Result<ProviderSet, PipelineError> {
    let endpoints = RemoteEndpoints::from_env()?;
    Ok(ProviderSet {
        generator: Box::new(RemoteProvider::new(endpoints.clone())),
        verifier: Box::new(RemoteProvider::new(endpoints.clone())),
        segmentation: Box::new(RemoteProvider::new(endpoints.clone())),
        depth: Box::new(RemoteProvider::new(endpoints.clone())),
        hand: Box::new(RemoteProvider::new(endpoints.clone())),
        interaction: Box::new(RemoteProvider::new(endpoints)),
    })
}

fn now_secs() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Seed-stream separation constants for the pipeline stages.
const SEED_MASKS: u64 = 0x6d61_736b;
const SEED_POSES: u64 = 0x706f_7365;

/// Execute the full pipeline for one task.
pub fn run(options: &RunOptions) -> Result<RunManifest, PipelineError> {
    let started_at = now_secs();
    let mut task = load_task(&options.task_path)?;
    task.cma.seed = options.seed;
    if options.ablate == Some(Ablation::NoContact) {
        task.weights = task.weights.without_contact();
    }
    let providers = match options.provider {
        ProviderKind::Oracle => oracle_provider_set(&task, options.noise),
        ProviderKind::Remote => remote_provider_set()?,
    };
    run_with_providers(options, &task, &providers, started_at)
}

pub fn run_with_providers(
    options: &RunOptions,
    task: &TaskDefinition,
    providers: &ProviderSet,
    started_at: u64,
) -> Result<RunManifest, PipelineError> {
    fs::create_dir_all(&options.out_dir)
        .map_err(|e| PipelineError::Io(format!("{}: {e}", options.out_dir.display())))?;
    let mut stages = Vec::new();
    let mut artifacts = BTreeMap::new();

    // stage 0: initial observation (ground-truth initial state render)
    let initial_state = SimState::initial(&task.scene);
    let initial_obs = render_state(&task.scene, &initial_state, true, 0);

    // stage 1: guidance video (generate, verify, select, pick keyframes)
    let video_dir = options.out_dir.join("video");
    let (guidance, video_record, video_status) =
        video_stage(options, task, providers, &initial_obs, &video_dir)?;
    stages.push(StageRecord {
        name: "video".into(),
        status: video_status.into(),
        detail: format!(
            "score {}/15, {} keyframes",
            video_record.score_total,
            video_record.keyframes.len()
        ),
    });
    artifacts.insert("video_dir".into(), video_dir.display().to_string());

    // stage 2: supervision bundle + trajectory initialization
    let bundle_dir = options.out_dir.join("bundle");
    let init_path = options.out_dir.join("init_trajectory.txt");
    let (bundle, init_traj, bundle_status) = bundle_stage(
        options,
        task,
        providers,
        &guidance,
        &initial_obs,
        &bundle_dir,
        &init_path,
    )?;
    stages.push(StageRecord {
        name: "bundle".into(),
        status: bundle_status.into(),
        detail: format!(
            "{} keyframes, affordance {} px",
            bundle.keyframes.len(),
            bundle.affordance.pixels.len()
        ),
    });
    artifacts.insert("bundle_dir".into(), bundle_dir.display().to_string());
    artifacts.insert("init_trajectory".into(), init_path.display().to_string());

    // stage 3: trajectory optimization
    let traj_path = options.out_dir.join("trajectory.txt");
    let log_path = options.out_dir.join("cost_log.csv");
    let init_for_opt = match options.ablate {
        Some(Ablation::NoInit) => zero_displacement_trajectory(
            &task.scene,
            init_traj.waypoint_count(),
            init_traj.segment_duration,
        )
        .map_err(|e| PipelineError::Config(e.to_string()))?,
        _ => init_traj.clone(),
    };
    let (best_traj, result_partial, opt_status) = optimize_stage(
        options,
        task,
        &bundle,
        &init_for_opt,
        &traj_path,
        &log_path,
    )?;
    stages.push(StageRecord {
        name: "optimize".into(),
        status: opt_status.into(),
        detail: format!(
            "best cost {:.6} over {} evaluations",
            result_partial.best_cost, result_partial.evaluations
        ),
    });
    artifacts.insert("trajectory".into(), traj_path.display().to_string());
    artifacts.insert("cost_log".into(), log_path.display().to_string());

    // stage 4: execute the best trajectory and score task success
    let mut result = result_partial;
    let record_at: Vec<usize> = (0..best_traj.waypoint_count()).collect();
    let record = rollout(&task.scene, &best_traj, &record_at)
        .map_err(|e| PipelineError::OptimizationFailed(format!("final rollout: {e}")))?;
    let (success, metric) = evaluate_success(&task.success, &record.final_state, &task.scene);
    result.success = success;
    result.success_metric = metric;
    let end_obs = render_state(&task.scene, &record.final_state, true, record_at.len());
    let end_depth_path = options.out_dir.join("end_frame.dpth");
    let end_seg_path = options.out_dir.join("end_frame.segm");
    let end_ppm_path = options.out_dir.join("end_frame.ppm");
    let end_depth_ppm = options.out_dir.join("end_frame_depth.ppm");
    let end_seg_ppm = options.out_dir.join("end_frame_seg.ppm");
    write_depth(&end_depth_path, &end_obs.depth)?;
    write_mask(&end_seg_path, &end_obs.seg)?;
    if let Some(color) = &end_obs.color {
        write_ppm(&end_ppm_path, color)?;
    }
    write_ppm(&end_depth_ppm, &depth_to_ppm(&end_obs.depth))?;
    write_ppm(&end_seg_ppm, &seg_to_ppm(&end_obs.seg))?;
    artifacts.insert("end_frame_depth".into(), end_depth_path.display().to_string());
    artifacts.insert("end_frame_seg".into(), end_seg_path.display().to_string());
    artifacts.insert("end_frame_ppm".into(), end_ppm_path.display().to_string());
    artifacts.insert(
        "end_frame_depth_ppm".into(),
        end_depth_ppm.display().to_string(),
    );
    artifacts.insert("end_frame_seg_ppm".into(), end_seg_ppm.display().to_string());
    stages.push(StageRecord {
        name: "execute".into(),
        status: "computed".into(),
        detail: format!("success={success} metric={metric:.4}"),
    });

    // manifest invariant: every recorded artifact path exists
    for (key, path) in &artifacts {
        if !Path::new(path).exists() {
            return Err(PipelineError::Io(format!(
                "artifact {key} missing at {path}"
            )));
        }
    }
    let manifest = RunManifest {
        task_file: options.task_path.display().to_string(),
        task_name: task.name.clone(),
        provider: match options.provider {
            ProviderKind::Oracle => "oracle".into(),
            ProviderKind::Remote => "remote".into(),
        },
        seed: options.seed,
        noise: options.noise,
        ablate: options.ablate.map(|a| {
            match a {
                Ablation::NoInit => "no-init",
                Ablation::NoContact => "no-contact",
            }
            .to_string()
        }),
        stages,
        artifacts,
        video: video_record,
        result,
        started_at,
        finished_at: now_secs(),
    };
    let manifest_path = options.out_dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| PipelineError::Io(e.to_string()))?;
    fs::write(&manifest_path, json)
        .map_err(|e| PipelineError::Io(format!("{}: {e}", manifest_path.display())))?;
    Ok(manifest)
}

fn video_stage(
    options: &RunOptions,
    task: &TaskDefinition,
    providers: &ProviderSet,
    initial_obs: &FrameObservation,
    video_dir: &Path,
) -> Result<(GuidanceVideo, VideoRecord, &'static str), PipelineError> {
    let meta_path = video_dir.join("video.txt");
    if options.resume && meta_path.exists() {
        let (guidance, record) = load_video_stage(video_dir, &meta_path)?;
        return Ok((guidance, record, "cached"));
    }
    let (sample, score, audit) = rejection_sample(
        providers.generator.as_ref(),
        providers.verifier.as_ref(),
        &task.description,
        &task.scene,
        initial_obs,
        task.candidates,
        options.seed,
    )
    .map_err(map_imagination)?;
    let stride = task
        .keyframe_stride
        .unwrap_or_else(|| default_stride(sample.len()));
    let guidance = select_keyframes(sample, score, stride, providers.interaction.as_ref())
        .map_err(map_perception)?;
    fs::create_dir_all(video_dir)
        .map_err(|e| PipelineError::Io(format!("{}: {e}", video_dir.display())))?;
    for (i, frame) in guidance.sample.frames.iter().enumerate() {
        write_ppm(&video_dir.join(format!("frame_{i:03}.ppm")), frame)?;
    }
    let record = VideoRecord {
        seed: guidance.sample.seed,
        score_total: guidance.score.total,
        match_description: guidance.score.match_description,
        hand_motion: guidance.score.hand_motion,
        goal_reached: guidance.score.goal_reached,
        new_object: guidance.score.new_object_detected,
        keyframes: guidance.keyframes.clone(),
        start: guidance.start,
        end: guidance.end,
        rejected: audit.iter().filter(|(_, s)| !s.accepted()).count(),
        candidates: audit
            .iter()
            .map(|(seed, s)| CandidateRecord {
                seed: *seed,
                total: s.total,
                accepted: s.accepted(),
            })
            .collect(),
    };
    let mut meta = String::new();
    meta.push_str(&format!("seed {}\n", record.seed));
    meta.push_str(&format!(
        "score {} {} {} {}\n",
        record.match_description,
        record.hand_motion,
        record.goal_reached,
        if record.new_object { 1 } else { 0 }
    ));
    meta.push_str(&format!("start {}\n", record.start));
    meta.push_str(&format!("end {}\n", record.end));
    let kfs: Vec<String> = record.keyframes.iter().map(|k| k.to_string()).collect();
    meta.push_str(&format!("keyframes {}\n", kfs.join(" ")));
    meta.push_str(&format!("frames {}\n", guidance.sample.len()));
    meta.push_str(&format!("prompt {}\n", guidance.sample.prompt.replace('\n', " ")));
    fs::write(&meta_path, meta)
        .map_err(|e| PipelineError::Io(format!("{}: {e}", meta_path.display())))?;
    let mut audit_text = String::from("seed,total,accepted\n");
    for c in &record.candidates {
        audit_text.push_str(&format!("{},{},{}\n", c.seed, c.total, c.accepted as u8));
    }
    fs::write(video_dir.join("candidates.txt"), audit_text)
        .map_err(|e| PipelineError::Io(e.to_string()))?;
    Ok((guidance, record, "computed"))
}

fn load_video_stage(
    video_dir: &Path,
    meta_path: &Path,
) -> Result<(GuidanceVideo, VideoRecord), PipelineError> {
    let meta = fs::read_to_string(meta_path)
        .map_err(|e| PipelineError::Io(format!("{}: {e}", meta_path.display())))?;
    let mut seed = 0u64;
    let mut score = (0u8, 0u8, 0u8, false);
    let mut start = 0usize;
    let mut end = 0usize;
    let mut keyframes: Vec<usize> = Vec::new();
    let mut frames_count = 0usize;
    let mut prompt = String::new();
    for line in meta.lines() {
        let mut it = line.split_whitespace();
        match it.next() {
            Some("seed") => seed = it.next().and_then(|t| t.parse().ok()).unwrap_or(0),
            Some("score") => {
                let vals: Vec<u8> = it.filter_map(|t| t.parse().ok()).collect();
                if vals.len() == 4 {
                    score = (vals[0], vals[1], vals[2], vals[3] == 1);
                }
            }
            Some("start") => start = it.next().and_then(|t| t.parse().ok()).unwrap_or(0),
            Some("end") => end = it.next().and_then(|t| t.parse().ok()).unwrap_or(0),
            Some("keyframes") => keyframes = it.filter_map(|t| t.parse().ok()).collect(),
            Some("frames") => frames_count = it.next().and_then(|t| t.parse().ok()).unwrap_or(0),
            Some("prompt") => prompt = it.collect::<Vec<_>>().join(" "),
            _ => {}
        }
    }
    let mut frames = Vec::with_capacity(frames_count);
    for i in 0..frames_count {
        frames.push(read_ppm(&video_dir.join(format!("frame_{i:03}.ppm")))?);
    }
    let sample = VideoSample::new(frames, prompt, "cached".into(), seed)
        .map_err(|e| PipelineError::Config(e.to_string()))?;
    let score = VideoScore::new(score.0, score.1, score.2, score.3)
        .map_err(|e| PipelineError::Config(e.to_string()))?;
    let guidance = GuidanceVideo::new(sample, score, keyframes.clone(), start, end)
        .map_err(|e| PipelineError::Config(e.to_string()))?;
    let candidates = fs::read_to_string(video_dir.join("candidates.txt"))
        .ok()
        .map(|text| {
            text.lines()
                .skip(1)
                .filter_map(|l| {
                    let toks: Vec<&str> = l.split(',').collect();
                    if toks.len() == 3 {
                        Some(CandidateRecord {
                            seed: toks[0].parse().ok()?,
                            total: toks[1].parse().ok()?,
                            accepted: toks[2] == "1",
                        })
                    } else {
                        None
                    }
                })
                .collect::<Vec<_>>()
        })
        .unwrap_or_default();
    let record = VideoRecord {
        seed,
        score_total: guidance.score.total,
        match_description: guidance.score.match_description,
        hand_motion: guidance.score.hand_motion,
        goal_reached: guidance.score.goal_reached,
        new_object: guidance.score.new_object_detected,
        keyframes,
        start,
        end,
        rejected: candidates.iter().filter(|c| !c.accepted).count(),
        candidates,
    };
    Ok((guidance, record))
}

#[allow(clippy::too_many_arguments)]
fn bundle_stage(
    options: &RunOptions,
    task: &TaskDefinition,
    providers: &ProviderSet,
    guidance: &GuidanceVideo,
    initial_obs: &FrameObservation,
    bundle_dir: &Path,
    init_path: &Path,
) -> Result<(SupervisionBundle, Trajectory, &'static str), PipelineError> {
    if options.resume && bundle_dir.join("bundle.txt").exists() && init_path.exists() {
        let bundle = read_bundle(bundle_dir)?;
        let init = trajectory_from_string(
            &fs::read_to_string(init_path)
                .map_err(|e| PipelineError::Io(format!("{}: {e}", init_path.display())))?,
        )?;
        return Ok((bundle, init, "cached"));
    }
    let scene = &task.scene;
    let masks = track_masks(
        guidance,
        scene,
        initial_obs,
        providers.segmentation.as_ref(),
        options.seed ^ SEED_MASKS,
    )
    .map_err(map_perception)?;
    let depths = complete_depth(guidance, &masks, initial_obs, providers.depth.as_ref())
        .map_err(map_perception)?;
    let actuator = scene.actuator();
    let target = scene.target();
    let segment_duration = task.segment_duration();
    // supervision bundle members (assembled before the initialization so
    // cost-aware init refinement can rank against it)
    let actuator_track = masks
        .iter()
        .find(|t| t.object == actuator.id)
        .ok_or_else(|| PipelineError::Config("actuator has no mask track".into()))?;
    let target_track = masks
        .iter()
        .find(|t| t.object == target.id)
        .ok_or_else(|| PipelineError::Config("target has no mask track".into()))?;
    let end_kf = *guidance.keyframes.last().expect("validated non-empty");
    let actuator_masks: Vec<_> = guidance
        .keyframes
        .iter()
        .map(|k| actuator_track.frames[*k].clone())
        .collect();
    let target_final_mask = target_track.frames[end_kf].clone();
    let actuator_final_cloud = backproject(
        &depths.frames[end_kf],
        &actuator_track.frames[end_kf],
        actuator.id,
        &scene.camera,
    )
    .map_err(|e| PipelineError::Config(e.to_string()))?;
    let target_final_cloud = backproject(
        &depths.frames[end_kf],
        &target_final_mask,
        target.id,
        &scene.camera,
    )
    .map_err(|e| PipelineError::Config(e.to_string()))?;
    let contacts = extract_contacts(guidance, scene, providers.interaction.as_ref())
        .map_err(map_perception)?;
    let affordance = detect_affordance(
        guidance,
        &actuator_track.frames[guidance.start],
        &depths.frames[guidance.start],
        actuator.id,
        &scene.camera,
        providers.hand.as_ref(),
    )
    .map_err(map_perception)?;
    let bundle = SupervisionBundle {
        keyframes: guidance.keyframes.clone(),
        actuator: actuator.id,
        target: target.id,
        actuator_masks,
        target_final_mask,
        actuator_final_cloud,
        target_final_cloud,
        contacts,
        affordance,
    };
    bundle
        .validate()
        .map_err(|e| PipelineError::Config(e.to_string()))?;
    // initialization from the tracked actuator
    let init_traj = match (&actuator.shape, actuator.constraint) {
        (Shape::Mesh(mesh), constraint) => {
            let static_ids: Vec<ObjectId> = scene
                .objects
                .iter()
                .filter(|o| !o.is_movable())
                .map(|o| o.id)
                .collect();
            let track = track_poses(
                mesh,
                actuator.id,
                guidance,
                masks
                    .iter()
                    .find(|t| t.object == actuator.id)
                    .ok_or_else(|| PipelineError::Config("actuator has no mask track".into()))?,
                &masks,
                &depths,
                initial_obs,
                &static_ids,
                &scene.camera,
                actuator.initial_pose,
                options.seed ^ SEED_POSES,
            )
            .map_err(map_perception)?;
            match constraint {
                MotionConstraint::Free => initial_trajectory_from_track(&track, segment_duration)
                    .map_err(|e| PipelineError::Config(e.to_string()))?,
                MotionConstraint::Hinge { .. } | MotionConstraint::Prismatic { .. } => {
                    scalar_trajectory_from_track(&track, scene, segment_duration)
                        .map_err(|e| PipelineError::Config(e.to_string()))?
                }
                MotionConstraint::Fixed => {
                    return Err(PipelineError::Config("actuator cannot be fixed".into()))
                }
            }
        }
        (Shape::Blob(_), _) => {
            let blob_masks = masks
                .iter()
                .find(|t| t.object == actuator.id)
                .ok_or_else(|| PipelineError::Config("blob actuator has no mask track".into()))?;
            let centroids =
                blob_centroid_track(blob_masks, &depths, &scene.camera, &guidance.keyframes)
                    .map_err(map_perception)?;
            // the start centroid must share the keyframe centroids' visible-
            // surface convention, so the bias cancels in the differences
            let start = backproject(
                &initial_obs.depth,
                &initial_obs.seg,
                actuator.id,
                &scene.camera,
            )
            .ok()
            .and_then(|c| c.centroid())
            .or_else(|| initial_blob_centroid(scene, actuator.id))
            .ok_or_else(|| PipelineError::Config("blob actuator missing".into()))?;
            let raw = velocity_trajectory_from_centroids(start, &centroids, segment_duration)
                .map_err(|e| PipelineError::Config(e.to_string()))?;
            refine_velocity_init(
                scene,
                actuator.id,
                &centroids,
                start,
                &raw,
                20,
                Some((&bundle, &task.weights)),
            )
        }
    };
    write_bundle(bundle_dir, &bundle)?;
    fs::write(init_path, trajectory_to_string(&init_traj))
        .map_err(|e| PipelineError::Io(format!("{}: {e}", init_path.display())))?;
    Ok((bundle, init_traj, "computed"))
}

fn initial_blob_centroid(
    scene: &reverie_core::sim::SceneConfig,
    id: ObjectId,
) -> Option<glam::DVec3> {
    let index = scene.index_of(id)?;
    let state = SimState::initial(scene);
    let particles = state.particles_of(index)?;
    Some(particles.iter().copied().sum::<glam::DVec3>() / particles.len() as f64)
}

fn optimize_stage(
    options: &RunOptions,
    task: &TaskDefinition,
    bundle: &SupervisionBundle,
    init: &Trajectory,
    traj_path: &Path,
    log_path: &Path,
) -> Result<(Trajectory, ResultRecord, &'static str), PipelineError> {
    if options.resume && traj_path.exists() && log_path.exists() {
        let traj = trajectory_from_string(
            &fs::read_to_string(traj_path)
                .map_err(|e| PipelineError::Io(format!("{}: {e}", traj_path.display())))?,
        )?;
        let history = parse_cost_log(
            &fs::read_to_string(log_path)
                .map_err(|e| PipelineError::Io(format!("{}: {e}", log_path.display())))?,
        )?;
        let mut result = ResultRecord::default();
        summarize_history(&history, &mut result);
        return Ok((traj, result, "cached"));
    }
    let mut config = task.cma;
    config.seed = options.seed;
    let outcome = {
        let run_opt = |evaluator: &dyn CandidateEvaluator| {
            optimize_trajectory(&task.scene, bundle, init, &task.weights, &config, evaluator)
        };
        match options.jobs {
            Some(1) => run_opt(&SerialEvaluator),
            Some(n) => {
                let pool = rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build()
                    .map_err(|e| PipelineError::Config(e.to_string()))?;
                pool.install(|| run_opt(&ParallelEvaluator))
            }
            None => run_opt(&ParallelEvaluator),
        }
    };
    let result = match outcome {
        Ok(r) => r,
        Err(OptimizeError::AllDiverged { diverged, evaluated }) => {
            return Err(PipelineError::OptimizationFailed(format!(
                "every rollout diverged ({diverged}/{evaluated})"
            )))
        }
        Err(e) => return Err(PipelineError::Config(e.to_string())),
    };
    fs::write(traj_path, trajectory_to_string(&result.best))
        .map_err(|e| PipelineError::Io(format!("{}: {e}", traj_path.display())))?;
    fs::write(log_path, cost_log_to_string(&result.history))
        .map_err(|e| PipelineError::Io(format!("{}: {e}", log_path.display())))?;
    let mut record = ResultRecord {
        best_cost: result.best_cost,
        evaluations: result.evaluations,
        repair_events: result.repair_events,
        ..ResultRecord::default()
    };
    if let Some(t) = result.best_terms {
        record.act_iou = t.act_iou;
        record.tar_iou = t.tar_iou;
        record.act_cd = t.act_cd;
        record.tar_cd = t.tar_cd;
        record.contact = t.contact;
    }
    if let Some(first) = result.history.first() {
        // candidate 0 of iteration 0 is the injected initialization
        record.init_cost = first.cost;
    }
    Ok((result.best, record, "computed"))
}

/// Parse a cost log written by `cost_log_to_string`.
pub fn parse_cost_log(text: &str) -> Result<Vec<EvalRecord>, PipelineError> {
    let mut out = Vec::new();
    for line in text.lines().skip(1) {
        let toks: Vec<&str> = line.split(',').collect();
        if toks.len() != 9 {
            return Err(PipelineError::Config("bad cost log line".into()));
        }
        let parse_f = |t: &str| -> Option<f64> { t.parse().ok() };
        let terms = if toks[3].is_empty() {
            None
        } else {
            Some(reverie_core::supervision::CostBreakdown {
                act_iou: parse_f(toks[3])
                    .ok_or_else(|| PipelineError::Config("bad cost log".into()))?,
                tar_iou: parse_f(toks[4])
                    .ok_or_else(|| PipelineError::Config("bad cost log".into()))?,
                act_cd: parse_f(toks[5])
                    .ok_or_else(|| PipelineError::Config("bad cost log".into()))?,
                tar_cd: parse_f(toks[6])
                    .ok_or_else(|| PipelineError::Config("bad cost log".into()))?,
                contact: parse_f(toks[7])
                    .ok_or_else(|| PipelineError::Config("bad cost log".into()))?,
                total: parse_f(toks[2])
                    .ok_or_else(|| PipelineError::Config("bad cost log".into()))?,
            })
        };
        out.push(EvalRecord {
            iteration: toks[0]
                .parse()
                .map_err(|_| PipelineError::Config("bad cost log".into()))?,
            candidate: toks[1]
                .parse()
                .map_err(|_| PipelineError::Config("bad cost log".into()))?,
            cost: parse_f(toks[2]).ok_or_else(|| PipelineError::Config("bad cost log".into()))?,
            terms,
            diverged: toks[8].trim() == "1",
        });
    }
    Ok(out)
}

fn summarize_history(history: &[EvalRecord], result: &mut ResultRecord) {
    result.evaluations = history.len();
    let mut best = f64::INFINITY;
    for r in history {
        if !r.diverged && r.cost < best {
            best = r.cost;
            if let Some(t) = r.terms {
                result.act_iou = t.act_iou;
                result.tar_iou = t.tar_iou;
                result.act_cd = t.act_cd;
                result.tar_cd = t.tar_cd;
                result.contact = t.contact;
            }
        }
    }
    result.best_cost = best;
    if let Some(first) = history.first() {
        result.init_cost = first.cost;
    }
}
