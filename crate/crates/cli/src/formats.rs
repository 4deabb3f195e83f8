//! On-disk artifact formats: raster files, trajectory and cost-log text,
//! PPM images, and the supervision-bundle directory layout.
//!
//! Float-bearing text artifacts print with 17 significant digits so a value
//! round-trips bit-exactly and identical runs produce identical bytes.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use glam::{DQuat, DVec3};

use reverie_core::geometry::{DepthMap, ObjectId, Pose6D, SegMask};
use reverie_core::optimize::EvalRecord;
use reverie_core::perception::{AffordanceRegion, ContactSchedule};
use reverie_core::render::ColorImage;
use reverie_core::sim::{ContactMatrix, Trajectory, TrajectoryMotion};
use reverie_core::supervision::{
    bundle_to_entries, cloud_from_xyz, SupervisionBundle,
};

use crate::pipeline::PipelineError;

fn io_err(path: &Path, e: std::io::Error) -> PipelineError {
    PipelineError::Io(format!("{}: {e}", path.display()))
}

pub fn write_depth(path: &Path, depth: &DepthMap) -> Result<(), PipelineError> {
    fs::write(path, depth.encode()).map_err(|e| io_err(path, e))
}

pub fn read_depth(path: &Path) -> Result<DepthMap, PipelineError> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    DepthMap::decode(&bytes).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))
}

pub fn write_mask(path: &Path, mask: &SegMask) -> Result<(), PipelineError> {
    fs::write(path, mask.encode()).map_err(|e| io_err(path, e))
}

pub fn read_mask(path: &Path) -> Result<SegMask, PipelineError> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    SegMask::decode(&bytes).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))
}

pub fn write_ppm(path: &Path, image: &ColorImage) -> Result<(), PipelineError> {
    fs::write(path, image.to_ppm()).map_err(|e| io_err(path, e))
}

pub fn read_ppm(path: &Path) -> Result<ColorImage, PipelineError> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    parse_ppm(&bytes).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))
}

pub fn parse_ppm(bytes: &[u8]) -> Result<ColorImage, String> {
    // P6\n<w> <h>\n255\n followed by raw RGB
    let header_end = bytes
        .windows(4)
        .position(|w| w == b"255\n")
        .ok_or("missing maxval")?
        + 4;
    let header = std::str::from_utf8(&bytes[..header_end]).map_err(|_| "bad header")?;
    let mut tokens = header.split_whitespace();
    if tokens.next() != Some("P6") {
        return Err("not a P6 file".into());
    }
    let width: u32 = tokens
        .next()
        .ok_or("missing width")?
        .parse()
        .map_err(|_| "bad width")?;
    let height: u32 = tokens
        .next()
        .ok_or("missing height")?
        .parse()
        .map_err(|_| "bad height")?;
    let body = &bytes[header_end..];
    let n = (width * height) as usize;
    if body.len() != n * 3 {
        return Err(format!("expected {} bytes, got {}", n * 3, body.len()));
    }
    let rgb = body.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
    Ok(ColorImage { width, height, rgb })
}

fn fmt_f(v: f64) -> String {
    format!("{v:.17e}")
}

pub fn trajectory_to_string(traj: &Trajectory) -> String {
    let mut s = String::new();
    match &traj.motion {
        TrajectoryMotion::Rigid(wps) => {
            s.push_str("kind rigid\n");
            s.push_str(&format!("segment_duration {}\n", fmt_f(traj.segment_duration)));
            for p in wps {
                let q = p.orientation;
                s.push_str(&format!(
                    "waypoint {} {} {} {} {} {} {}\n",
                    fmt_f(p.position.x),
                    fmt_f(p.position.y),
                    fmt_f(p.position.z),
                    fmt_f(q.w),
                    fmt_f(q.x),
                    fmt_f(q.y),
                    fmt_f(q.z),
                ));
            }
        }
        TrajectoryMotion::Scalar(wps) => {
            s.push_str("kind scalar\n");
            s.push_str(&format!("segment_duration {}\n", fmt_f(traj.segment_duration)));
            for q in wps {
                s.push_str(&format!("waypoint {}\n", fmt_f(*q)));
            }
        }
        TrajectoryMotion::ParticleVelocity(wps) => {
            s.push_str("kind particle_velocity\n");
            s.push_str(&format!("segment_duration {}\n", fmt_f(traj.segment_duration)));
            for v in wps {
                s.push_str(&format!(
                    "velocity {} {} {}\n",
                    fmt_f(v.x),
                    fmt_f(v.y),
                    fmt_f(v.z)
                ));
            }
        }
    }
    s
}

pub fn trajectory_from_string(text: &str) -> Result<Trajectory, PipelineError> {
    let bad = |m: &str| PipelineError::Config(format!("trajectory file: {m}"));
    let mut kind = None;
    let mut segment_duration = None;
    let mut rigid = Vec::new();
    let mut scalars = Vec::new();
    let mut velocities = Vec::new();
    for line in text.lines() {
        let mut it = line.split_whitespace();
        match it.next() {
            Some("kind") => kind = it.next().map(str::to_string),
            Some("segment_duration") => {
                segment_duration = Some(
                    it.next()
                        .ok_or_else(|| bad("missing duration"))?
                        .parse::<f64>()
                        .map_err(|_| bad("bad duration"))?,
                )
            }
            Some("waypoint") => {
                let nums: Result<Vec<f64>, _> = it.map(str::parse::<f64>).collect();
                let nums = nums.map_err(|_| bad("bad waypoint number"))?;
                match nums.len() {
                    7 => rigid.push(Pose6D::new(
                        DVec3::new(nums[0], nums[1], nums[2]),
                        DQuat::from_xyzw(nums[4], nums[5], nums[6], nums[3]),
                    )),
                    1 => scalars.push(nums[0]),
                    _ => return Err(bad("waypoint needs 1 or 7 numbers")),
                }
            }
            Some("velocity") => {
                let nums: Result<Vec<f64>, _> = it.map(str::parse::<f64>).collect();
                let nums = nums.map_err(|_| bad("bad velocity number"))?;
                if nums.len() != 3 {
                    return Err(bad("velocity needs 3 numbers"));
                }
                velocities.push(DVec3::new(nums[0], nums[1], nums[2]));
            }
            None => {}
            Some(other) => return Err(bad(&format!("unknown record '{other}'"))),
        }
    }
    let segment_duration = segment_duration.ok_or_else(|| bad("missing segment_duration"))?;
    let motion = match kind.as_deref() {
        Some("rigid") => TrajectoryMotion::Rigid(rigid),
        Some("scalar") => TrajectoryMotion::Scalar(scalars),
        Some("particle_velocity") => TrajectoryMotion::ParticleVelocity(velocities),
        _ => return Err(bad("missing or unknown kind")),
    };
    Trajectory::new(motion, segment_duration).map_err(|e| bad(&e.to_string()))
}

/// Cost-history log: one comma-separated line per evaluation.
pub fn cost_log_to_string(history: &[EvalRecord]) -> String {
    let mut s = String::from(
        "iteration,candidate,cost,act_iou,tar_iou,act_cd,tar_cd,contact,diverged\n",
    );
    for r in history {
        let terms = match &r.terms {
            Some(t) => format!(
                "{},{},{},{},{}",
                fmt_f(t.act_iou),
                fmt_f(t.tar_iou),
                fmt_f(t.act_cd),
                fmt_f(t.tar_cd),
                fmt_f(t.contact)
            ),
            None => ",,,,".to_string(),
        };
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            r.iteration,
            r.candidate,
            fmt_f(r.cost),
            terms,
            if r.diverged { 1 } else { 0 }
        ));
    }
    s
}

/// Write the supervision bundle as a directory of named entries.
pub fn write_bundle(dir: &Path, bundle: &SupervisionBundle) -> Result<(), PipelineError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    for (name, bytes) in bundle_to_entries(bundle) {
        let path = dir.join(name);
        fs::write(&path, bytes).map_err(|e| io_err(&path, e))?;
    }
    Ok(())
}

/// Reload a bundle written by `write_bundle`.
pub fn read_bundle(dir: &Path) -> Result<SupervisionBundle, PipelineError> {
    let meta_path = dir.join("bundle.txt");
    let meta = fs::read_to_string(&meta_path).map_err(|e| io_err(&meta_path, e))?;
    let mut actuator = None;
    let mut target = None;
    let mut keyframes: Vec<usize> = Vec::new();
    for line in meta.lines() {
        let mut it = line.split_whitespace();
        match it.next() {
            Some("actuator") => {
                actuator = Some(ObjectId(
                    it.next()
                        .and_then(|t| t.parse().ok())
                        .ok_or_else(|| PipelineError::Config("bad actuator id".into()))?,
                ))
            }
            Some("target") => {
                target = Some(ObjectId(
                    it.next()
                        .and_then(|t| t.parse().ok())
                        .ok_or_else(|| PipelineError::Config("bad target id".into()))?,
                ))
            }
            Some("keyframes") => {
                keyframes = it
                    .map(|t| t.parse::<usize>())
                    .collect::<Result<_, _>>()
                    .map_err(|_| PipelineError::Config("bad keyframes".into()))?;
            }
            _ => {}
        }
    }
    let actuator = actuator.ok_or_else(|| PipelineError::Config("bundle missing actuator".into()))?;
    let target = target.ok_or_else(|| PipelineError::Config("bundle missing target".into()))?;
    let mut actuator_masks = Vec::with_capacity(keyframes.len());
    for i in 0..keyframes.len() {
        actuator_masks.push(read_mask(&dir.join(format!("actuator_mask_{i:03}.segm")))?);
    }
    let target_final_mask = read_mask(&dir.join("target_final.segm"))?;
    let actuator_final_cloud = cloud_from_xyz(
        &fs::read(dir.join("actuator_final.xyz")).map_err(|e| io_err(dir, e))?,
    )
    .map_err(|e| PipelineError::Config(e.to_string()))?;
    let target_final_cloud = cloud_from_xyz(
        &fs::read(dir.join("target_final.xyz")).map_err(|e| io_err(dir, e))?,
    )
    .map_err(|e| PipelineError::Config(e.to_string()))?;
    // contact schedule: lines "kf fg tar flag"
    let sched_text = fs::read_to_string(dir.join("contact_schedule.txt"))
        .map_err(|e| io_err(dir, e))?;
    let mut per_kf: BTreeMap<usize, Vec<(ObjectId, ObjectId, bool)>> = BTreeMap::new();
    for k in &keyframes {
        per_kf.insert(*k, Vec::new());
    }
    for line in sched_text.lines() {
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 4 {
            continue;
        }
        let kf: usize = toks[0]
            .parse()
            .map_err(|_| PipelineError::Config("bad schedule line".into()))?;
        let f: u16 = toks[1]
            .parse()
            .map_err(|_| PipelineError::Config("bad schedule line".into()))?;
        let t: u16 = toks[2]
            .parse()
            .map_err(|_| PipelineError::Config("bad schedule line".into()))?;
        let c = toks[3] == "1";
        per_kf
            .entry(kf)
            .or_default()
            .push((ObjectId(f), ObjectId(t), c));
    }
    let matrices = keyframes
        .iter()
        .map(|k| ContactMatrix::new(per_kf.get(k).cloned().unwrap_or_default()))
        .collect();
    let contacts = ContactSchedule {
        keyframes: keyframes.clone(),
        matrices,
    };
    // affordance: "pixel x y" / "grasp x y z"
    let aff_text =
        fs::read_to_string(dir.join("affordance.txt")).map_err(|e| io_err(dir, e))?;
    let mut pixels = Vec::new();
    let mut grasp_points = Vec::new();
    for line in aff_text.lines() {
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["pixel", x, y] => pixels.push((
                x.parse()
                    .map_err(|_| PipelineError::Config("bad pixel".into()))?,
                y.parse()
                    .map_err(|_| PipelineError::Config("bad pixel".into()))?,
            )),
            ["grasp", x, y, z] => grasp_points.push(DVec3::new(
                x.parse()
                    .map_err(|_| PipelineError::Config("bad grasp".into()))?,
                y.parse()
                    .map_err(|_| PipelineError::Config("bad grasp".into()))?,
                z.parse()
                    .map_err(|_| PipelineError::Config("bad grasp".into()))?,
            )),
            _ => {}
        }
    }
    let bundle = SupervisionBundle {
        keyframes,
        actuator,
        target,
        actuator_masks,
        target_final_mask,
        actuator_final_cloud,
        target_final_cloud,
        contacts,
        affordance: AffordanceRegion {
            pixels,
            grasp_points,
        },
    };
    bundle
        .validate()
        .map_err(|e| PipelineError::Config(e.to_string()))?;
    Ok(bundle)
}
