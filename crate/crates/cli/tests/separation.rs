//! Cost-separation property: on every desk task's noiseless oracle bundle,
//! the scripted ground-truth trajectory scores strictly lower than random
//! trajectories. The cost function must rank the true demonstration first.

use std::path::{Path, PathBuf};

use glam::DVec3;

use reverie_cli::formats::read_bundle;
use reverie_cli::pipeline::{oracle_provider_set, run_with_providers, RunOptions};
use reverie_cli::taskfile::load_task;
use reverie_core::optimize::{evaluate_candidate, EvalOutcome};
use reverie_core::rng::Rng;
use reverie_core::sim::{Trajectory, TrajectoryMotion};

fn task_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../tasks")
        .join(format!("{name}.task"))
}

fn random_trajectory(template: &Trajectory, rng: &mut Rng) -> Trajectory {
    let motion = match &template.motion {
        TrajectoryMotion::Rigid(wps) => TrajectoryMotion::Rigid(
            wps.iter()
                .map(|p| {
                    p.with_increment(
                        DVec3::new(
                            rng.uniform_in(-0.1, 0.1),
                            rng.uniform_in(-0.1, 0.1),
                            rng.uniform_in(-0.1, 0.1),
                        ),
                        DVec3::new(
                            rng.uniform_in(-0.5, 0.5),
                            rng.uniform_in(-0.5, 0.5),
                            rng.uniform_in(-0.5, 0.5),
                        ),
                    )
                })
                .collect(),
        ),
        TrajectoryMotion::Scalar(wps) => TrajectoryMotion::Scalar(
            wps.iter().map(|_| rng.uniform_in(-1.5, 1.5)).collect(),
        ),
        TrajectoryMotion::ParticleVelocity(wps) => TrajectoryMotion::ParticleVelocity(
            wps.iter()
                .map(|_| {
                    DVec3::new(
                        rng.uniform_in(-0.08, 0.08),
                        rng.uniform_in(-0.08, 0.08),
                        rng.uniform_in(-0.08, 0.08),
                    )
                })
                .collect(),
        ),
    };
    Trajectory {
        motion,
        segment_duration: template.segment_duration,
    }
}

#[test]
fn ground_truth_outranks_random_trajectories() {
    for name in [
        "push_box",
        "hammer_peg",
        "pour_grains",
        "stretch_band",
        "open_door",
    ] {
        let path = task_path(name);
        let mut task = load_task(&path).unwrap();
        // bundle extraction only needs a token optimization budget
        task.cma.population = 4;
        task.cma.iterations = 1;
        let out = std::env::temp_dir()
            .join("reverie_separation")
            .join(format!("{name}_{}", std::process::id()));
        std::fs::remove_dir_all(&out).ok();
        let mut options = RunOptions::new(&path, &out);
        options.noise = 0.0;
        options.seed = 11;
        let providers = oracle_provider_set(&task, 0.0);
        let manifest = run_with_providers(&options, &task, &providers, 0).unwrap();
        let bundle = read_bundle(Path::new(&manifest.artifacts["bundle_dir"])).unwrap();
        let gt = task.script.variants[0].trajectory.clone();
        let gt_cost = match evaluate_candidate(&task.scene, &bundle, &task.weights, &gt) {
            EvalOutcome::Scored(b) => b.total,
            EvalOutcome::Diverged => panic!("{name}: ground truth diverged"),
        };
        let mut rng = Rng::seed_from(1234);
        let mut beaten = 0;
        for k in 0..100 {
            let candidate = random_trajectory(&gt, &mut rng);
            let cost = evaluate_candidate(&task.scene, &bundle, &task.weights, &candidate).cost();
            assert!(
                gt_cost < cost,
                "{name}: random trajectory {k} scored {cost:.4} <= gt {gt_cost:.4}"
            );
            beaten += 1;
        }
        println!("{name}: gt cost {gt_cost:.4} beats {beaten}/100 random trajectories");
        std::fs::remove_dir_all(&out).ok();
    }
}
