//! Kinematic tabletop environment: seeded scenes, scripted demonstrations,
//! and waypoint execution with success predicates.

mod render;
mod scene;
mod tasks;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use render::{render, BACKGROUND};
pub use scene::{distance, FailureReason, Region, SceneObject, SceneState};
pub use tasks::{
    find_task, resolve_tasks, task_library, Carry, Goal, ObjectSpec, RegionSpec, TaskLevel, TaskSpec, HOME,
    STATION_JITTER,
};

use crate::demo_store::{
    Dataset, DatasetError, Demonstration, Manifest, Observation, Pose7, SimParams, WorkspaceBounds,
};
use crate::discretizer::{dequantize_pose, QuantizedPose};
use crate::seeds::derive_seed;

pub const DEFAULT_IMAGE_SIZE: u32 = 32;
/// Interpolated steps per waypoint transition.
pub const SUBSTEPS: usize = 3;
const JOINTS: usize = 7;
const JOINT_PROFILE: [f64; JOINTS] = [0.8, -0.6, 0.5, 0.9, -0.4, 0.7, 0.3];

pub fn default_workspace() -> WorkspaceBounds {
    WorkspaceBounds::new([0.0, -0.5, 0.0], [1.0, 0.5, 0.5], 100).expect("static bounds are valid")
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub workspace: WorkspaceBounds,
    pub params: SimParams,
    pub image_size: u32,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            workspace: default_workspace(),
            params: SimParams::default(),
            image_size: DEFAULT_IMAGE_SIZE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RolloutResult {
    pub task: String,
    pub episode_seed: u64,
    pub success: bool,
    pub steps_executed: usize,
    pub failure_reason: Option<FailureReason>,
}

impl RolloutResult {
    pub fn failed(task: &str, episode_seed: u64, reason: FailureReason) -> Self {
        RolloutResult {
            task: task.to_string(),
            episode_seed,
            success: false,
            steps_executed: 0,
            failure_reason: Some(reason),
        }
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("task `{0}` has no scripted policy")]
    NoPolicy(String),
    #[error("scripted policy of `{task}` failed its own predicate (seed {seed})")]
    PolicyFailed { task: String, seed: u64 },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

/// Run quantized key-actions from the scene's current state and judge the result.
pub fn execute_actions(
    task: &TaskSpec,
    scene: &mut SceneState,
    episode_seed: u64,
    actions: &[QuantizedPose],
    ws: &WorkspaceBounds,
) -> RolloutResult {
    if actions.is_empty() {
        return RolloutResult::failed(task.name, episode_seed, FailureReason::NoActions);
    }
    let mut steps = 0;
    for q in actions {
        match dequantize_pose(q, ws) {
            Ok(pose) => scene.apply_pose(&pose),
            Err(_) => {
                return RolloutResult {
                    steps_executed: steps,
                    ..RolloutResult::failed(task.name, episode_seed, FailureReason::OutOfWorkspace)
                }
            }
        }
        steps += 1;
    }
    let success = task.success(scene);
    RolloutResult {
        task: task.name.to_string(),
        episode_seed,
        success,
        steps_executed: steps,
        failure_reason: (!success).then_some(FailureReason::PredicateFalse),
    }
}

fn lerp(a: &[f64; 3], b: &[f64; 3], s: f64) -> [f64; 3] {
    [0, 1, 2].map(|i| a[i] + (b[i] - a[i]) * s)
}

/// Dense trajectory through `waypoints`: each move takes `SUBSTEPS` steps with
/// the joints at rest on arrival; a gripper-only change takes one resting step.
pub fn densify(start: &Pose7, waypoints: &[Pose7]) -> Vec<(Pose7, Vec<f64>)> {
    let mut out = vec![(*start, vec![0.0; JOINTS])];
    let mut current = *start;
    for w in waypoints {
        let dist = distance(&current.position, &w.position);
        if dist > 0.0 {
            let speed = (dist * 4.0).max(0.2);
            for s in 1..SUBSTEPS {
                let frac = s as f64 / SUBSTEPS as f64;
                let pose = Pose7 {
                    position: lerp(&current.position, &w.position, frac),
                    rpy: current.rpy,
                    gripper_open: current.gripper_open,
                };
                out.push((pose, JOINT_PROFILE.iter().map(|c| c * speed).collect()));
            }
        }
        out.push((*w, vec![0.0; JOINTS]));
        current = *w;
    }
    out
}

/// Roll out a seen task's scripted policy and record it as a demonstration.
pub fn record_demonstration(
    task: &TaskSpec,
    id: String,
    seed: u64,
    cfg: &SimConfig,
) -> Result<Demonstration, SimError> {
    let mut scene = task.sample_scene(seed, cfg.params);
    let objects = scene.object_records();
    let waypoints = task
        .scripted_policy(&scene)
        .ok_or_else(|| SimError::NoPolicy(task.name.to_string()))?;
    let dense = densify(&scene.gripper, &waypoints);
    let mut observations = Vec::with_capacity(dense.len());
    let mut actions = Vec::with_capacity(dense.len());
    for (t, (pose, joint_velocities)) in dense.into_iter().enumerate() {
        scene.apply_pose(&pose);
        observations.push(Observation {
            rgb: render(&scene, &cfg.workspace, cfg.image_size),
            joint_velocities,
            gripper_open: pose.gripper_open,
            timestep: t as u32,
        });
        actions.push(pose);
    }
    if !task.success(&scene) {
        return Err(SimError::PolicyFailed {
            task: task.name.to_string(),
            seed,
        });
    }
    Ok(Demonstration {
        id,
        task_name: task.name.to_string(),
        language: task.language.to_string(),
        observations,
        actions,
        objects,
    })
}

pub fn demo_id(task: &str, episode: usize) -> String {
    format!("{task}_{episode:04}")
}

/// Generate `episodes_per_task` scripted demonstrations for each task.
pub fn generate_seen_dataset(
    tasks: &[TaskSpec],
    episodes_per_task: usize,
    seed: u64,
    cfg: &SimConfig,
) -> Result<Dataset, SimError> {
    if let Some(t) = tasks.iter().find(|t| t.level != TaskLevel::Seen) {
        return Err(SimError::NoPolicy(t.name.to_string()));
    }
    let jobs: Vec<(&TaskSpec, usize)> = tasks
        .iter()
        .flat_map(|t| (0..episodes_per_task).map(move |e| (t, e)))
        .collect();
    let demos = jobs
        .par_iter()
        .map(|(t, e)| record_demonstration(t, demo_id(t.name, *e), derive_seed(seed, t.name, *e as u64), cfg))
        .collect::<Result<Vec<_>, _>>()?;
    let mut manifest = Manifest::new(cfg.workspace, tasks.iter().map(|t| t.name.to_string()).collect());
    manifest.sim = cfg.params;
    Ok(Dataset::new(manifest, demos)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretizer::quantize_pose;
    use crate::keyframe::{extract_keyframes, DEFAULT_VELOCITY_EPSILON};

    #[test]
    fn keyframes_recover_the_scripted_waypoints() {
        let cfg = SimConfig::default();
        for task in task_library().iter().filter(|t| t.level == TaskLevel::Seen) {
            let demo = record_demonstration(task, "d".into(), 11, &cfg).unwrap();
            let scene = task.sample_scene(11, cfg.params);
            let waypoints = task.oracle_keyactions(&scene);
            let keys = extract_keyframes(&demo, DEFAULT_VELOCITY_EPSILON);
            let got: Vec<Pose7> = keys.actions().copied().collect();
            assert_eq!(got, waypoints, "{}", task.name);
        }
    }

    #[test]
    fn oracle_closure_for_every_task() {
        let cfg = SimConfig::default();
        for task in task_library() {
            for seed in 0..20 {
                let mut scene = task.sample_scene(seed, cfg.params);
                let actions: Vec<QuantizedPose> = task
                    .oracle_keyactions(&scene)
                    .iter()
                    .map(|p| quantize_pose(p, &cfg.workspace))
                    .collect();
                let r = execute_actions(&task, &mut scene, seed, &actions, &cfg.workspace);
                assert!(r.success, "{} seed {seed}: {r:?}", task.name);
            }
        }
    }

    #[test]
    fn empty_and_invalid_actions() {
        let cfg = SimConfig::default();
        let task = find_task("push_button").unwrap();
        let mut scene = task.sample_scene(0, cfg.params);
        let r = execute_actions(&task, &mut scene, 0, &[], &cfg.workspace);
        assert_eq!(r.failure_reason, Some(FailureReason::NoActions));
        let bad = QuantizedPose { grid: [150, 0, 0], rpy_bins: [0; 3], gripper: 0 };
        let r = execute_actions(&task, &mut scene, 0, &[bad], &cfg.workspace);
        assert_eq!(r.failure_reason, Some(FailureReason::OutOfWorkspace));
    }

    #[test]
    fn release_outside_target_fails() {
        let cfg = SimConfig::default();
        let task = find_task("close_lid_seen").unwrap();
        let mut scene = task.sample_scene(3, cfg.params);
        let mut path = task.oracle_keyactions(&scene);
        // shift the two release waypoints 6 cm sideways (tolerance is 4 cm)
        let n = path.len();
        for p in &mut path[n - 3..n - 1] {
            p.position[1] += 0.06;
        }
        let actions: Vec<QuantizedPose> = path.iter().map(|p| quantize_pose(p, &cfg.workspace)).collect();
        let r = execute_actions(&task, &mut scene, 3, &actions, &cfg.workspace);
        assert_eq!(r.failure_reason, Some(FailureReason::PredicateFalse));
        let lid = scene.object("lid").unwrap();
        let pot = scene.object("pot").unwrap();
        let target = [pot.center[0], pot.center[1], pot.center[2] + 0.06];
        assert!(distance(&lid.center, &target) > cfg.params.region_tolerance);
    }

    #[test]
    fn attachment_conserves_objects() {
        let cfg = SimConfig::default();
        let task = find_task("stack_block").unwrap();
        let mut scene = task.sample_scene(5, cfg.params);
        let base_before = scene.object("green block").unwrap().center;
        for pose in task.oracle_keyactions(&scene.clone()) {
            scene.apply_pose(&pose);
            assert_eq!(scene.objects.len(), 2);
            assert!(scene.objects.iter().filter(|o| o.attached).count() <= 1);
            if let Some(a) = scene.attached() {
                assert_eq!(a.center, scene.gripper.position);
            }
            // the static base never moves
            assert_eq!(scene.object("green block").unwrap().center, base_before);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = SimConfig { image_size: 8, ..SimConfig::default() };
        let tasks = resolve_tasks("seen").unwrap();
        let a = generate_seen_dataset(&tasks, 2, 7, &cfg).unwrap();
        let b = generate_seen_dataset(&tasks, 2, 7, &cfg).unwrap();
        assert_eq!(a.len(), 16);
        assert_eq!(a.digest(), b.digest());
        assert!(generate_seen_dataset(&resolve_tasks("push_lever").unwrap(), 1, 7, &cfg).is_err());
    }
}
