//! Video-to-supervision extraction against the offline oracle: mask and
//! depth contracts, pose tracking on scripted motion, keyframe selection,
//! affordances, and cost self-consistency.

use glam::{DQuat, DVec3};

use reverie_core::geometry::{backproject, chamfer, iou, CameraModel, DepthMap, ObjectId, Pose6D, SegMask, TriMesh};
use reverie_core::imagination::{rejection_sample, GuidanceVideo, VideoSample};
use reverie_core::oracle::{DemoScript, NoiseModel, OracleProvider, ScriptLabels, ScriptVariant};
use reverie_core::perception::{
    blob_centroid_track, complete_depth, default_stride, detect_affordance, select_keyframes,
    track_masks, track_poses, DepthProvider, HandProvider, MaskTrack, PerceptionError,
};
use reverie_core::render::FrameObservation;
use reverie_core::sim::render_state;
use reverie_core::rng::Rng;
use reverie_core::sim::{
    rollout, ObjectSpec, SceneConfig, SimState, Trajectory, TrajectoryMotion,
};
use reverie_core::perception::AffordanceRegion;
use reverie_core::supervision::{total_cost, CostWeights, SupervisionBundle};

const PUSHER: ObjectId = ObjectId(1);
const BOX: ObjectId = ObjectId(2);
const DESK: ObjectId = ObjectId(10);

fn camera() -> CameraModel {
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

fn scene() -> SceneConfig {
    SceneConfig::new(
        vec![
            ObjectSpec::rigid(
                PUSHER,
                "pusher",
                TriMesh::box_mesh(DVec3::new(0.05, 0.03, 0.025)),
                Pose6D::from_translation(DVec3::new(-0.16, 0.0, 0.025)),
            )
            .as_actuator(),
            ObjectSpec::rigid(
                BOX,
                "box",
                TriMesh::box_mesh(DVec3::splat(0.025)),
                Pose6D::from_translation(DVec3::new(0.0, 0.0, 0.025)),
            )
            .as_target(),
            ObjectSpec::rigid(
                DESK,
                "desk",
                TriMesh::box_mesh(DVec3::new(0.5, 0.5, 0.02)),
                Pose6D::from_translation(DVec3::new(0.0, 0.0, -0.02)),
            )
            .as_background(),
        ],
        camera(),
        DVec3::new(0.0, 0.0, -9.8),
        0.01,
        0.005,
    )
    .unwrap()
}

fn script() -> DemoScript {
    let wps: Vec<Pose6D> = (0..8)
        .map(|i| Pose6D::from_translation(DVec3::new(-0.125 + 0.025 * i as f64, 0.0, 0.025)))
        .collect();
    DemoScript {
        variants: vec![ScriptVariant {
            tag: "success".into(),
            trajectory: Trajectory::new(TrajectoryMotion::Rigid(wps), 0.5).unwrap(),
            labels: ScriptLabels {
                match_description: 6,
                hand_motion: 3,
                goal_reached: 6,
                new_object: false,
                usable: true,
                start_frame: 5,
                end_frame: 40,
                grasp_pixels: vec![(120, 150), (124, 152)],
            },
        }],
        frames_per_segment: 5,
    }
}

struct Fixture {
    scene: SceneConfig,
    oracle: OracleProvider,
    initial: FrameObservation,
    guidance: GuidanceVideo,
}

fn fixture(noise: NoiseModel) -> Fixture {
    let scene = scene();
    let oracle = OracleProvider::new(scene.clone(), script(), noise);
    let initial = render_state(&scene, &SimState::initial(&scene), true, 0);
    let (sample, score, _) = rejection_sample(
        &oracle,
        &oracle,
        "push the box to the goal",
        &scene,
        &initial,
        2,
        9,
    )
    .unwrap();
    let stride = default_stride(sample.len());
    let guidance = select_keyframes(sample, score, stride, &oracle).unwrap();
    Fixture {
        scene,
        oracle,
        initial,
        guidance,
    }
}

#[test]
fn noiseless_tracks_equal_ground_truth_masks() {
    let f = fixture(NoiseModel::off());
    let tracks = track_masks(&f.guidance, &f.scene, &f.initial, &f.oracle, 1).unwrap();
    // re-synthesize the same video and compare against the rendered labels
    let synth = f.oracle.synth(f.guidance.sample.seed).unwrap();
    for track in &tracks {
        for (frame, mask) in track.frames.iter().enumerate() {
            let gt = &synth.masks[tracks
                .iter()
                .position(|t| t.object == track.object)
                .unwrap()]
            .frames[frame];
            assert_eq!(mask, gt, "object {} frame {frame}", track.object);
        }
    }
    // frame count matches video length
    assert_eq!(tracks[0].frames.len(), f.guidance.sample.len());
}

#[test]
fn dilated_masks_keep_iou_above_bound() {
    // default noise dilates/erodes by at most 2 px; for objects tens of
    // pixels wide the per-frame IoU against truth stays usable
    let clean = fixture(NoiseModel::off());
    // mask-only corruption so both oracles describe the same video
    let mask_noise = NoiseModel {
        level: 1.0,
        mask_radius_max: 2,
        depth_frac: 0.0,
        pos_sigma: 0.0,
        rot_sigma: 0.0,
    };
    let noisy_oracle = OracleProvider::new(clean.scene.clone(), script(), mask_noise);
    let clean_tracks =
        track_masks(&clean.guidance, &clean.scene, &clean.initial, &clean.oracle, 1).unwrap();
    let noisy_tracks = track_masks(
        &clean.guidance,
        &clean.scene,
        &clean.initial,
        &noisy_oracle,
        1,
    )
    .unwrap();
    for (c, n) in clean_tracks.iter().zip(&noisy_tracks) {
        for (frame, (cm, nm)) in c.frames.iter().zip(&n.frames).enumerate() {
            if cm.count_label(c.object) < 400 {
                continue; // below ~20 px wide the bound does not apply
            }
            let overlap = iou(cm, nm, c.object).unwrap();
            assert!(
                overlap >= 0.7,
                "object {} frame {frame}: IoU {overlap}",
                c.object
            );
        }
    }
}

/// Provider that corrupts every background pixel, to prove the invariant is
/// enforced by the pipeline rather than trusted from the provider.
struct LyingDepthProvider<'a>(&'a OracleProvider);

impl DepthProvider for LyingDepthProvider<'_> {
    fn complete(
        &self,
        video: &VideoSample,
        masks: &[MaskTrack],
        initial: &FrameObservation,
    ) -> Result<Vec<DepthMap>, PerceptionError> {
        let mut frames = self.0.complete(video, masks, initial)?;
        for f in &mut frames {
            for y in 0..f.height() {
                for x in 0..f.width() {
                    f.set(x, y, 9.0);
                }
            }
        }
        Ok(frames)
    }
}

#[test]
fn background_depth_is_overwritten_bitwise() {
    let f = fixture(NoiseModel::off());
    let tracks = track_masks(&f.guidance, &f.scene, &f.initial, &f.oracle, 1).unwrap();
    let lying = LyingDepthProvider(&f.oracle);
    let depths = complete_depth(&f.guidance, &tracks, &f.initial, &lying).unwrap();
    for (fi, frame) in depths.frames.iter().enumerate() {
        for y in 0..frame.height() {
            for x in 0..frame.width() {
                let foreground = tracks
                    .iter()
                    .any(|t| t.frames[fi].label_at(x, y) == t.object);
                if !foreground {
                    assert_eq!(
                        frame.get(x, y),
                        f.initial.depth.get(x, y),
                        "frame {fi} pixel ({x},{y})"
                    );
                }
            }
        }
    }
}

#[test]
fn depth_noise_keeps_backprojected_cloud_near_truth() {
    // +-5% multiplicative depth noise: the actuator cloud stays within
    // 5% of mean depth (Chamfer) of the noiseless cloud
    let clean = fixture(NoiseModel::off());
    let noisy_oracle = OracleProvider::new(clean.scene.clone(), script(), NoiseModel::default());
    let tracks =
        track_masks(&clean.guidance, &clean.scene, &clean.initial, &clean.oracle, 1).unwrap();
    let clean_depth =
        complete_depth(&clean.guidance, &tracks, &clean.initial, &clean.oracle).unwrap();
    let noisy_depth =
        complete_depth(&clean.guidance, &tracks, &clean.initial, &noisy_oracle).unwrap();
    let kf = *clean.guidance.keyframes.last().unwrap();
    let track = tracks.iter().find(|t| t.object == PUSHER).unwrap();
    let cam = clean.scene.camera;
    let a = backproject(&clean_depth.frames[kf], &track.frames[kf], PUSHER, &cam).unwrap();
    let b = backproject(&noisy_depth.frames[kf], &track.frames[kf], PUSHER, &cam).unwrap();
    let mean_depth: f64 = 0.7; // desk scale viewing distance
    let d = chamfer(&a, &b).unwrap();
    assert!(
        d <= 0.05 * mean_depth,
        "chamfer {d} exceeds 5% of mean depth"
    );
}

#[test]
fn pose_track_is_constant_for_static_object_and_monotone_for_moving() {
    let f = fixture(NoiseModel::off());
    let tracks = track_masks(&f.guidance, &f.scene, &f.initial, &f.oracle, 1).unwrap();
    let depths = complete_depth(&f.guidance, &tracks, &f.initial, &f.oracle).unwrap();
    let statics = [DESK];
    // static target: constant within tolerance
    let box_spec = f.scene.object(BOX).unwrap();
    let box_mesh = match &box_spec.shape {
        reverie_core::sim::Shape::Mesh(m) => m.clone(),
        _ => unreachable!(),
    };
    let track = track_poses(
        &box_mesh,
        BOX,
        &f.guidance,
        tracks.iter().find(|t| t.object == BOX).unwrap(),
        &tracks,
        &depths,
        &f.initial,
        &statics,
        &f.scene.camera,
        box_spec.initial_pose,
        3,
    )
    .unwrap();
    // the pusher makes contact around the third keyframe; before that the
    // box is genuinely static
    for e in &track.entries[0..2] {
        assert!(
            (e.pose.position - box_spec.initial_pose.position).length() < 0.004,
            "static object drifted: {:?}",
            e.pose.position
        );
    }
    // moving actuator: x estimates increase monotonically, endpoint within 1 cm
    let pusher_spec = f.scene.object(PUSHER).unwrap();
    let pusher_mesh = match &pusher_spec.shape {
        reverie_core::sim::Shape::Mesh(m) => m.clone(),
        _ => unreachable!(),
    };
    let track = track_poses(
        &pusher_mesh,
        PUSHER,
        &f.guidance,
        tracks.iter().find(|t| t.object == PUSHER).unwrap(),
        &tracks,
        &depths,
        &f.initial,
        &statics,
        &f.scene.camera,
        pusher_spec.initial_pose,
        3,
    )
    .unwrap();
    let xs: Vec<f64> = track.entries.iter().map(|e| e.pose.position.x).collect();
    for w in xs.windows(2) {
        assert!(w[1] > w[0] - 0.003, "x estimates not monotone: {xs:?}");
    }
    let want_end = 0.05; // final scripted waypoint x
    assert!(
        (xs.last().unwrap() - want_end).abs() < 0.01,
        "endpoint {} vs {want_end}",
        xs.last().unwrap()
    );
}

#[test]
fn keyframe_selection_respects_start_end_window() {
    let f = fixture(NoiseModel::off());
    assert_eq!(f.guidance.start, 5);
    assert_eq!(f.guidance.end, 40);
    assert_eq!(f.guidance.keyframes, vec![5, 10, 15, 20, 25, 30, 35, 40]);
    assert!(f.guidance.keyframes.windows(2).all(|w| w[0] < w[1]));
    assert!(f.guidance.keyframes.iter().all(|k| *k < f.guidance.sample.len()));
}

#[test]
fn affordance_pixels_intersect_actuator_mask_and_backproject() {
    let f = fixture(NoiseModel::off());
    let tracks = track_masks(&f.guidance, &f.scene, &f.initial, &f.oracle, 1).unwrap();
    let depths = complete_depth(&f.guidance, &tracks, &f.initial, &f.oracle).unwrap();
    let actuator_track = tracks.iter().find(|t| t.object == PUSHER).unwrap();
    let region = detect_affordance(
        &f.guidance,
        &actuator_track.frames[f.guidance.start],
        &depths.frames[f.guidance.start],
        PUSHER,
        &f.scene.camera,
        &f.oracle,
    )
    .unwrap();
    // every affordance pixel lies on the actuator mask
    for (x, y) in &region.pixels {
        assert_eq!(
            actuator_track.frames[f.guidance.start].label_at(*x, *y),
            PUSHER
        );
    }
    // grasp points live near the actuator surface (within 2 cm)
    let spec = f.scene.object(PUSHER).unwrap();
    let mesh = match &spec.shape {
        reverie_core::sim::Shape::Mesh(m) => m,
        _ => unreachable!(),
    };
    // actuator pose at the start keyframe comes from the script rollout
    let synth = f.oracle.synth(f.guidance.sample.seed).unwrap();
    let pose = synth.states[f.guidance.start]
        .pose_of(f.scene.index_of(PUSHER).unwrap())
        .unwrap();
    for p in &region.grasp_points {
        let local = pose.inverse().transform_point(*p);
        assert!(mesh.signed_distance(local).distance.abs() < 0.02);
    }

    // fingertips that never touch the actuator mask leave the region empty
    struct OffMaskHand;
    impl HandProvider for OffMaskHand {
        fn fingertips(
            &self,
            _video: &VideoSample,
            _frame: usize,
        ) -> Result<Vec<(u32, u32)>, PerceptionError> {
            Ok(vec![(2, 2)])
        }
    }
    let empty = detect_affordance(
        &f.guidance,
        &actuator_track.frames[f.guidance.start],
        &depths.frames[f.guidance.start],
        PUSHER,
        &f.scene.camera,
        &OffMaskHand,
    )
    .unwrap();
    assert!(empty.is_empty());
}

#[test]
fn blob_centroids_error_on_vanished_object() {
    let f = fixture(NoiseModel::off());
    let empty_track = MaskTrack {
        object: ObjectId(7),
        frames: vec![SegMask::new_background(256, 256); f.guidance.sample.len()],
    };
    let tracks = track_masks(&f.guidance, &f.scene, &f.initial, &f.oracle, 1).unwrap();
    let depths = complete_depth(&f.guidance, &tracks, &f.initial, &f.oracle).unwrap();
    assert!(matches!(
        blob_centroid_track(&empty_track, &depths, &f.scene.camera, &f.guidance.keyframes),
        Err(PerceptionError::TrackingLost { .. })
    ));
}

#[test]
fn rollout_scored_against_its_own_observations_costs_zero() {
    // a bundle assembled from a rollout's own renders must score that
    // rollout at exactly zero
    let f = fixture(NoiseModel::off());
    let traj = script().variants[0].trajectory.clone();
    let record_at: Vec<usize> = (0..traj.waypoint_count()).collect();
    let record = rollout(&f.scene, &traj, &record_at).unwrap();
    let keyframes: Vec<usize> = f.guidance.keyframes.clone();
    let cam = f.scene.camera;
    let end = record.samples.last().unwrap();
    let bundle = SupervisionBundle {
        keyframes: keyframes.clone(),
        actuator: PUSHER,
        target: BOX,
        actuator_masks: record
            .samples
            .iter()
            .map(|s| s.obs.seg.isolate(PUSHER))
            .collect(),
        target_final_mask: end.obs.seg.isolate(BOX),
        actuator_final_cloud: backproject(&end.obs.depth, &end.obs.seg, PUSHER, &cam).unwrap(),
        target_final_cloud: backproject(&end.obs.depth, &end.obs.seg, BOX, &cam).unwrap(),
        contacts: reverie_core::perception::ContactSchedule::empty(keyframes),
        affordance: AffordanceRegion::default(),
    };
    let obs: Vec<_> = record.samples.iter().map(|s| s.obs.clone()).collect();
    let states: Vec<_> = record.samples.iter().map(|s| s.state.clone()).collect();
    let cost = total_cost(&obs, &states, &bundle, &CostWeights::default(), &f.scene).unwrap();
    assert_eq!(cost.total, 0.0, "self-consistency: {cost:?}");
}

#[test]
fn template_prompt_is_deterministic_and_validates() {
    use reverie_core::imagination::template_prompt;
    let s = scene();
    let a = template_prompt("push the box", &s).unwrap();
    let b = template_prompt("push the box", &s).unwrap();
    assert_eq!(a, b);
    assert!(a.contains("pusher") && a.contains("box"));
    assert!(template_prompt("   ", &s).is_err());
}

#[test]
fn optimizer_never_returns_worse_than_init() {
    use reverie_core::optimize::{optimize_trajectory, CmaConfig, SerialEvaluator};
    let f = fixture(NoiseModel::default());
    let tracks = track_masks(&f.guidance, &f.scene, &f.initial, &f.oracle, 1).unwrap();
    let depths = complete_depth(&f.guidance, &tracks, &f.initial, &f.oracle).unwrap();
    let end_kf = *f.guidance.keyframes.last().unwrap();
    let cam = f.scene.camera;
    let actuator_track = tracks.iter().find(|t| t.object == PUSHER).unwrap();
    let target_track = tracks.iter().find(|t| t.object == BOX).unwrap();
    let bundle = SupervisionBundle {
        keyframes: f.guidance.keyframes.clone(),
        actuator: PUSHER,
        target: BOX,
        actuator_masks: f
            .guidance
            .keyframes
            .iter()
            .map(|k| actuator_track.frames[*k].clone())
            .collect(),
        target_final_mask: target_track.frames[end_kf].clone(),
        actuator_final_cloud: backproject(
            &depths.frames[end_kf],
            &actuator_track.frames[end_kf],
            PUSHER,
            &cam,
        )
        .unwrap(),
        target_final_cloud: backproject(
            &depths.frames[end_kf],
            &target_track.frames[end_kf],
            BOX,
            &cam,
        )
        .unwrap(),
        contacts: reverie_core::perception::ContactSchedule::empty(f.guidance.keyframes.clone()),
        affordance: AffordanceRegion::default(),
    };
    // a deliberately rough init: the scripted waypoints shifted sideways
    let init = match &script().variants[0].trajectory.motion {
        TrajectoryMotion::Rigid(wps) => Trajectory::new(
            TrajectoryMotion::Rigid(
                wps.iter()
                    .map(|p| p.with_increment(DVec3::new(0.0, 0.02, 0.005), DVec3::ZERO))
                    .collect(),
            ),
            0.5,
        )
        .unwrap(),
        _ => unreachable!(),
    };
    let init_outcome =
        reverie_core::optimize::evaluate_candidate(&f.scene, &bundle, &CostWeights::default(), &init);
    let config = CmaConfig {
        population: 12,
        iterations: 3,
        seed: 5,
        ..CmaConfig::default()
    };
    let result = optimize_trajectory(
        &f.scene,
        &bundle,
        &init,
        &CostWeights::default(),
        &config,
        &SerialEvaluator,
    )
    .unwrap();
    assert!(result.best_cost <= init_outcome.cost());
    assert_eq!(result.evaluations, 36);
    assert!(result.history[0].iteration == 0 && result.history[0].candidate == 0);
    // candidate 0 of generation 0 is the injected init
    assert!((result.history[0].cost - init_outcome.cost()).abs() < 1e-12);
}

#[test]
fn quaternion_waypoints_track_through_perception() {
    // rotated actuator waypoints survive the pose-estimation round trip
    let scene = scene();
    let mut wps: Vec<Pose6D> = Vec::new();
    for i in 0..8 {
        wps.push(Pose6D::new(
            DVec3::new(-0.12 + 0.02 * i as f64, 0.0, 0.03),
            DQuat::from_axis_angle(DVec3::Z, 0.05 * i as f64),
        ));
    }
    let script = DemoScript {
        variants: vec![ScriptVariant {
            tag: "success".into(),
            trajectory: Trajectory::new(TrajectoryMotion::Rigid(wps.clone()), 0.5).unwrap(),
            labels: ScriptLabels {
                match_description: 6,
                hand_motion: 3,
                goal_reached: 6,
                new_object: false,
                usable: true,
                start_frame: 5,
                end_frame: 40,
                grasp_pixels: vec![],
            },
        }],
        frames_per_segment: 5,
    };
    let oracle = OracleProvider::new(scene.clone(), script, NoiseModel::off());
    let initial = render_state(&scene, &SimState::initial(&scene), true, 0);
    let (sample, score, _) =
        rejection_sample(&oracle, &oracle, "turn and slide", &scene, &initial, 1, 3).unwrap();
    let guidance = select_keyframes(sample, score, 5, &oracle).unwrap();
    let tracks = track_masks(&guidance, &scene, &initial, &oracle, 1).unwrap();
    let depths = complete_depth(&guidance, &tracks, &initial, &oracle).unwrap();
    let spec = scene.object(PUSHER).unwrap();
    let mesh = match &spec.shape {
        reverie_core::sim::Shape::Mesh(m) => m.clone(),
        _ => unreachable!(),
    };
    let track = track_poses(
        &mesh,
        PUSHER,
        &guidance,
        tracks.iter().find(|t| t.object == PUSHER).unwrap(),
        &tracks,
        &depths,
        &initial,
        &[DESK],
        &scene.camera,
        spec.initial_pose,
        4,
    )
    .unwrap();
    for (e, wp) in track.entries.iter().zip(&wps) {
        assert!((e.pose.position - wp.position).length() < 0.01);
        assert!(e.pose.rotation_to(wp).length() < 5f64.to_radians());
    }
    let _ = Rng::seed_from(0);
}
