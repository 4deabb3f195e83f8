//! Task files: a TOML key-value tree declaring the scene (objects, camera,
//! integration parameters), optimizer settings, cost weights, the success
//! predicate, and a pointer to the demonstration script file.

use std::path::{Path, PathBuf};

use glam::{DQuat, DVec3};
use serde::Deserialize;

use reverie_core::geometry::{CameraModel, ObjectId, Pose6D, TriMesh};
use reverie_core::optimize::CmaConfig;
use reverie_core::oracle::{DemoScript, ScriptLabels, ScriptVariant};
use reverie_core::sim::{
    grid_blob_particles, ring_blob_particles, BlobBehavior, MotionConstraint, ObjectSpec,
    ParticleBlob, SceneConfig, Shape, Trajectory, TrajectoryMotion,
};
use reverie_core::supervision::CostWeights;
use reverie_core::task::{SuccessPredicate, TaskDefinition};

use crate::obj::load_obj;
use crate::pipeline::PipelineError;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TaskFile {
    name: String,
    description: String,
    script: String,
    camera: CameraDecl,
    simulation: SimulationDecl,
    #[serde(default)]
    optimizer: OptimizerDecl,
    #[serde(default)]
    weights: WeightsDecl,
    #[serde(default)]
    pipeline: PipelineDecl,
    #[serde(rename = "object")]
    objects: Vec<ObjectDecl>,
    success: SuccessDecl,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CameraDecl {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    eye: [f64; 3],
    target: [f64; 3],
    #[serde(default = "default_up")]
    up: [f64; 3],
    width: u32,
    height: u32,
}

fn default_up() -> [f64; 3] {
    [0.0, 0.0, 1.0]
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SimulationDecl {
    gravity: [f64; 3],
    timestep: f64,
    contact_epsilon: f64,
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct OptimizerDecl {
    population: Option<usize>,
    iterations: Option<usize>,
    sigma_pos: Option<f64>,
    sigma_rot_deg: Option<f64>,
    sigma_vel: Option<f64>,
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct WeightsDecl {
    actuator_iou: Option<f64>,
    target_iou: Option<f64>,
    actuator_chamfer: Option<f64>,
    target_chamfer: Option<f64>,
    contact: Option<f64>,
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct PipelineDecl {
    candidates: Option<usize>,
    keyframe_stride: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ObjectDecl {
    id: u16,
    name: String,
    shape: ShapeDecl,
    pose: PoseDecl,
    #[serde(default)]
    roles: Vec<String>,
    mass: Option<f64>,
    constraint: Option<ConstraintDecl>,
    #[serde(default)]
    collide_background: Option<bool>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ShapeDecl {
    /// Box half-extents in meters.
    #[serde(rename = "box")]
    box_half: Option<[f64; 3]>,
    /// Union of offset boxes (object frame), e.g. a hammer head + handle.
    boxes: Option<Vec<BoxPart>>,
    /// Path to an OBJ mesh, relative to the task file.
    mesh: Option<String>,
    blob: Option<BlobDecl>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct BoxPart {
    half: [f64; 3],
    #[serde(default)]
    offset: [f64; 3],
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct BlobDecl {
    kind: String, // "grid" | "ring"
    #[serde(default)]
    count: Option<[usize; 3]>,
    #[serde(default)]
    spacing: Option<f64>,
    #[serde(default)]
    ring_count: Option<usize>,
    #[serde(default)]
    ring_radius: Option<f64>,
    radius: f64,
    behavior: String, // "granular" | "elastic"
    #[serde(default)]
    actuated: Vec<u32>,
    #[serde(default)]
    actuated_every: Option<usize>,
    #[serde(default)]
    stiffness: Option<f64>,
    #[serde(default)]
    damping: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PoseDecl {
    position: [f64; 3],
    #[serde(default)]
    rotation_axis: Option<[f64; 3]>,
    #[serde(default)]
    rotation_deg: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConstraintDecl {
    kind: String, // "fixed" | "hinge" | "prismatic"
    #[serde(default)]
    pivot: Option<[f64; 3]>,
    #[serde(default)]
    axis: Option<[f64; 3]>,
    #[serde(default)]
    friction_accel: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SuccessDecl {
    kind: String,
    object: u16,
    #[serde(default)]
    point: Option<[f64; 3]>,
    #[serde(default)]
    radius: Option<f64>,
    #[serde(default)]
    horizontal_only: Option<bool>,
    #[serde(default)]
    threshold: Option<f64>,
    #[serde(default)]
    min: Option<[f64; 3]>,
    #[serde(default)]
    max: Option<[f64; 3]>,
    #[serde(default)]
    fraction: Option<f64>,
    #[serde(default)]
    anchors: Option<Vec<[f64; 3]>>,
    #[serde(default)]
    capture_radius: Option<f64>,
    #[serde(default)]
    max_height: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScriptFile {
    frames_per_segment: usize,
    #[serde(rename = "variant")]
    variants: Vec<VariantDecl>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct VariantDecl {
    tag: String,
    usable: bool,
    match_description: u8,
    hand_motion: u8,
    goal_reached: u8,
    #[serde(default)]
    new_object: bool,
    start_frame: usize,
    end_frame: usize,
    #[serde(default)]
    grasp_pixels: Vec<[u32; 2]>,
    segment_duration: f64,
    kind: String, // "rigid" | "scalar" | "particle_velocity"
    #[serde(default)]
    waypoints: Vec<PoseDecl>,
    #[serde(default)]
    scalars: Vec<f64>,
    #[serde(default)]
    velocities: Vec<[f64; 3]>,
}

fn vec3(a: [f64; 3]) -> DVec3 {
    DVec3::new(a[0], a[1], a[2])
}

fn pose_from_decl(p: &PoseDecl) -> Result<Pose6D, PipelineError> {
    let rot = match (p.rotation_axis, p.rotation_deg) {
        (Some(axis), Some(deg)) => {
            let axis = vec3(axis);
            if axis.length() < 1e-12 {
                return Err(PipelineError::Config("zero rotation axis".into()));
            }
            DQuat::from_axis_angle(axis.normalize(), deg.to_radians())
        }
        (None, None) => DQuat::IDENTITY,
        _ => {
            return Err(PipelineError::Config(
                "rotation needs both rotation_axis and rotation_deg".into(),
            ))
        }
    };
    Ok(Pose6D::new(vec3(p.position), rot))
}

fn shape_from_decl(decl: &ShapeDecl, base: &Path) -> Result<Shape, PipelineError> {
    let chosen = [
        decl.box_half.is_some(),
        decl.boxes.is_some(),
        decl.mesh.is_some(),
        decl.blob.is_some(),
    ]
    .iter()
    .filter(|b| **b)
    .count();
    if chosen != 1 {
        return Err(PipelineError::Config(
            "shape needs exactly one of box / boxes / mesh / blob".into(),
        ));
    }
    if let Some(half) = decl.box_half {
        return Ok(Shape::Mesh(TriMesh::box_mesh(vec3(half))));
    }
    if let Some(parts) = &decl.boxes {
        let mut vertices = Vec::new();
        let mut triangles: Vec<[u32; 3]> = Vec::new();
        for part in parts {
            let unit = TriMesh::box_mesh(vec3(part.half));
            let base_index = vertices.len() as u32;
            vertices.extend(unit.vertices().iter().map(|v| *v + vec3(part.offset)));
            triangles.extend(
                unit.triangles()
                    .iter()
                    .map(|t| [t[0] + base_index, t[1] + base_index, t[2] + base_index]),
            );
        }
        return Ok(Shape::Mesh(
            TriMesh::new(vertices, triangles)
                .map_err(|e| PipelineError::Config(e.to_string()))?,
        ));
    }
    if let Some(path) = &decl.mesh {
        return Ok(Shape::Mesh(load_obj(&base.join(path))?));
    }
    let blob = decl.blob.as_ref().unwrap();
    let particles = match blob.kind.as_str() {
        "grid" => {
            let count = blob.count.ok_or_else(|| {
                PipelineError::Config("grid blob needs count = [nx, ny, nz]".into())
            })?;
            let spacing = blob
                .spacing
                .ok_or_else(|| PipelineError::Config("grid blob needs spacing".into()))?;
            grid_blob_particles((count[0], count[1], count[2]), spacing)
        }
        "ring" => {
            let count = blob
                .ring_count
                .ok_or_else(|| PipelineError::Config("ring blob needs ring_count".into()))?;
            let radius = blob
                .ring_radius
                .ok_or_else(|| PipelineError::Config("ring blob needs ring_radius".into()))?;
            ring_blob_particles(count, radius)
        }
        other => {
            return Err(PipelineError::Config(format!(
                "unknown blob kind '{other}'"
            )))
        }
    };
    let behavior = match blob.behavior.as_str() {
        "granular" => BlobBehavior::FreeGranular,
        "elastic" => BlobBehavior::CohesiveElastic,
        other => {
            return Err(PipelineError::Config(format!(
                "unknown blob behavior '{other}'"
            )))
        }
    };
    let mut actuated = blob.actuated.clone();
    if let Some(every) = blob.actuated_every {
        if every == 0 {
            return Err(PipelineError::Config("actuated_every must be >= 1".into()));
        }
        actuated.extend((0..particles.len()).step_by(every).map(|i| i as u32));
        actuated.sort_unstable();
        actuated.dedup();
    }
    let mut built = ParticleBlob::new(particles, blob.radius, behavior, actuated)
        .map_err(|e| PipelineError::Config(e.to_string()))?;
    if let (Some(k), Some(d)) = (blob.stiffness, blob.damping) {
        built = built.with_spring(k, d);
    }
    Ok(Shape::Blob(built))
}

fn constraint_from_decl(decl: &ConstraintDecl) -> Result<MotionConstraint, PipelineError> {
    match decl.kind.as_str() {
        "fixed" => Ok(MotionConstraint::Fixed),
        "hinge" => {
            let pivot = decl
                .pivot
                .ok_or_else(|| PipelineError::Config("hinge needs pivot".into()))?;
            let axis = decl
                .axis
                .ok_or_else(|| PipelineError::Config("hinge needs axis".into()))?;
            Ok(MotionConstraint::Hinge {
                pivot: vec3(pivot),
                axis: vec3(axis).normalize(),
            })
        }
        "prismatic" => {
            let axis = decl
                .axis
                .ok_or_else(|| PipelineError::Config("prismatic needs axis".into()))?;
            Ok(MotionConstraint::Prismatic {
                axis: vec3(axis).normalize(),
                friction_accel: decl.friction_accel.unwrap_or(20.0),
            })
        }
        other => Err(PipelineError::Config(format!(
            "unknown constraint kind '{other}'"
        ))),
    }
}

fn success_from_decl(decl: &SuccessDecl) -> Result<SuccessPredicate, PipelineError> {
    let object = ObjectId(decl.object);
    let need = |opt: Option<f64>, what: &str| {
        opt.ok_or_else(|| PipelineError::Config(format!("success.{what} is required")))
    };
    match decl.kind.as_str() {
        "near_point" => Ok(SuccessPredicate::NearPoint {
            object,
            point: vec3(
                decl.point
                    .ok_or_else(|| PipelineError::Config("success.point is required".into()))?,
            ),
            radius: need(decl.radius, "radius")?,
            horizontal_only: decl.horizontal_only.unwrap_or(false),
        }),
        "scalar_below" => Ok(SuccessPredicate::ScalarBelow {
            object,
            threshold: need(decl.threshold, "threshold")?,
        }),
        "scalar_above" => Ok(SuccessPredicate::ScalarAbove {
            object,
            threshold: need(decl.threshold, "threshold")?,
        }),
        "particles_in_box" => Ok(SuccessPredicate::ParticlesInBox {
            object,
            min: vec3(
                decl.min
                    .ok_or_else(|| PipelineError::Config("success.min is required".into()))?,
            ),
            max: vec3(
                decl.max
                    .ok_or_else(|| PipelineError::Config("success.max is required".into()))?,
            ),
            fraction: need(decl.fraction, "fraction")?,
        }),
        "blob_over_anchors" => Ok(SuccessPredicate::BlobOverAnchors {
            object,
            anchors: decl
                .anchors
                .as_ref()
                .ok_or_else(|| PipelineError::Config("success.anchors is required".into()))?
                .iter()
                .map(|a| vec3(*a))
                .collect(),
            capture_radius: need(decl.capture_radius, "capture_radius")?,
            max_height: need(decl.max_height, "max_height")?,
        }),
        other => Err(PipelineError::Config(format!(
            "unknown success kind '{other}'"
        ))),
    }
}

fn script_from_file(path: &Path) -> Result<DemoScript, PipelineError> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        PipelineError::Config(format!("cannot read script {}: {e}", path.display()))
    })?;
    let parsed: ScriptFile = toml::from_str(&text)
        .map_err(|e| PipelineError::Config(format!("bad script {}: {e}", path.display())))?;
    if parsed.variants.is_empty() {
        return Err(PipelineError::Config("script declares no variants".into()));
    }
    let mut variants = Vec::with_capacity(parsed.variants.len());
    for v in &parsed.variants {
        let motion = match v.kind.as_str() {
            "rigid" => {
                let wps: Result<Vec<Pose6D>, PipelineError> =
                    v.waypoints.iter().map(pose_from_decl).collect();
                TrajectoryMotion::Rigid(wps?)
            }
            "scalar" => TrajectoryMotion::Scalar(v.scalars.clone()),
            "particle_velocity" => {
                TrajectoryMotion::ParticleVelocity(v.velocities.iter().map(|a| vec3(*a)).collect())
            }
            other => {
                return Err(PipelineError::Config(format!(
                    "unknown trajectory kind '{other}'"
                )))
            }
        };
        let trajectory = Trajectory::new(motion, v.segment_duration)
            .map_err(|e| PipelineError::Config(format!("variant '{}': {e}", v.tag)))?;
        variants.push(ScriptVariant {
            tag: v.tag.clone(),
            trajectory,
            labels: ScriptLabels {
                match_description: v.match_description,
                hand_motion: v.hand_motion,
                goal_reached: v.goal_reached,
                new_object: v.new_object,
                usable: v.usable,
                start_frame: v.start_frame,
                end_frame: v.end_frame,
                grasp_pixels: v.grasp_pixels.iter().map(|p| (p[0], p[1])).collect(),
            },
        });
    }
    Ok(DemoScript {
        variants,
        frames_per_segment: parsed.frames_per_segment,
    })
}

/// Load and validate a task file plus its demonstration script.
pub fn load_task(path: &Path) -> Result<TaskDefinition, PipelineError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| PipelineError::MissingTask(path.to_path_buf(), e.to_string()))?;
    let parsed: TaskFile = toml::from_str(&text)
        .map_err(|e| PipelineError::Config(format!("bad task file {}: {e}", path.display())))?;
    let base: PathBuf = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let cam = CameraModel::look_at(
        parsed.camera.fx,
        parsed.camera.fy,
        parsed.camera.cx,
        parsed.camera.cy,
        vec3(parsed.camera.eye),
        vec3(parsed.camera.target),
        vec3(parsed.camera.up),
        parsed.camera.width,
        parsed.camera.height,
    )
    .map_err(|e| PipelineError::Config(format!("camera: {e}")))?;
    let mut objects = Vec::with_capacity(parsed.objects.len());
    for o in &parsed.objects {
        let shape = shape_from_decl(&o.shape, &base)?;
        let pose = pose_from_decl(&o.pose)?;
        let mut spec = match shape {
            Shape::Mesh(mesh) => ObjectSpec::rigid(ObjectId(o.id), &o.name, mesh, pose),
            Shape::Blob(blob) => ObjectSpec::blob(ObjectId(o.id), &o.name, blob, pose),
        };
        for role in &o.roles {
            spec = match role.as_str() {
                "actuator" => spec.as_actuator(),
                "target" => spec.as_target(),
                "background" => spec.as_background(),
                other => {
                    return Err(PipelineError::Config(format!("unknown role '{other}'")))
                }
            };
        }
        if let Some(m) = o.mass {
            spec = spec.with_mass(m);
        }
        if let Some(c) = &o.constraint {
            spec = spec.with_constraint(constraint_from_decl(c)?);
        }
        if o.collide_background == Some(false) {
            spec = spec.without_background_collision();
        }
        objects.push(spec);
    }
    let scene = SceneConfig::new(
        objects,
        cam,
        vec3(parsed.simulation.gravity),
        parsed.simulation.timestep,
        parsed.simulation.contact_epsilon,
    )
    .map_err(|e| PipelineError::Config(e.to_string()))?;
    let script = script_from_file(&base.join(&parsed.script))?;
    let defaults = CmaConfig::default();
    let cma = CmaConfig {
        population: parsed.optimizer.population.unwrap_or(defaults.population),
        iterations: parsed.optimizer.iterations.unwrap_or(defaults.iterations),
        sigma_pos: parsed.optimizer.sigma_pos.unwrap_or(defaults.sigma_pos),
        sigma_rot: parsed
            .optimizer
            .sigma_rot_deg
            .map(|d| d.to_radians())
            .unwrap_or(defaults.sigma_rot),
        sigma_vel: parsed.optimizer.sigma_vel.unwrap_or(defaults.sigma_vel),
        seed: 0,
    };
    let wd = CostWeights::default();
    let weights = CostWeights {
        w_act_iou: parsed.weights.actuator_iou.unwrap_or(wd.w_act_iou),
        w_tar_iou: parsed.weights.target_iou.unwrap_or(wd.w_tar_iou),
        w_act_cd: parsed.weights.actuator_chamfer.unwrap_or(wd.w_act_cd),
        w_tar_cd: parsed.weights.target_chamfer.unwrap_or(wd.w_tar_cd),
        w_contact: parsed.weights.contact.unwrap_or(wd.w_contact),
    };
    weights
        .validate()
        .map_err(|e| PipelineError::Config(e.to_string()))?;
    let success = success_from_decl(&parsed.success)?;
    Ok(TaskDefinition {
        name: parsed.name,
        description: parsed.description,
        scene,
        script,
        weights,
        cma,
        keyframe_stride: parsed.pipeline.keyframe_stride,
        candidates: parsed.pipeline.candidates.unwrap_or(4),
        success,
    })
}
