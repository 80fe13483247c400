//! Key-action extraction from dense trajectories.
//!
//! A step `t >= 1` is a key-action when the gripper state flips, when every
//! joint is (nearly) at rest, or when it is the final step.

use serde::{Deserialize, Serialize};

use crate::demo_store::{Demonstration, Pose7};

pub const DEFAULT_VELOCITY_EPSILON: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct Keyframe {
    pub timestep: u32,
    pub action: Pose7,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KeyActionSequence {
    pub demo_id: String,
    pub keyframes: Vec<Keyframe>,
}

impl KeyActionSequence {
    pub fn actions(&self) -> impl Iterator<Item = &Pose7> {
        self.keyframes.iter().map(|k| &k.action)
    }

    pub fn timesteps(&self) -> Vec<u32> {
        self.keyframes.iter().map(|k| k.timestep).collect()
    }
}

fn max_abs(values: &[f64]) -> f64 {
    values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

/// Step indices satisfying the key-action predicate, before duplicate coalescing.
pub fn keyframe_candidates(demo: &Demonstration, velocity_epsilon: f64) -> Vec<usize> {
    assert!(velocity_epsilon > 0.0, "velocity_epsilon must be positive");
    let obs = &demo.observations;
    let last = obs.len() - 1;
    (1..obs.len())
        .filter(|&t| {
            obs[t].gripper_open != obs[t - 1].gripper_open
                || max_abs(&obs[t].joint_velocities) < velocity_epsilon
                || t == last
        })
        .collect()
}

/// Extract key-actions. Runs of consecutive candidates with identical poses
/// keep their earliest step, except the run reaching the final step, which
/// keeps the final step.
pub fn extract_keyframes(demo: &Demonstration, velocity_epsilon: f64) -> KeyActionSequence {
    let candidates = keyframe_candidates(demo, velocity_epsilon);
    let last = demo.actions.len() - 1;
    let mut keyframes: Vec<Keyframe> = Vec::with_capacity(candidates.len());
    for t in candidates {
        let action = demo.actions[t];
        match keyframes.last_mut() {
            Some(prev) if prev.action == action => {
                if t == last {
                    prev.timestep = t as u32;
                }
            }
            _ => keyframes.push(Keyframe {
                timestep: t as u32,
                action,
            }),
        }
    }
    KeyActionSequence {
        demo_id: demo.id.clone(),
        keyframes,
    }
}

/// One line of the `extract-keyframes` output file.
#[derive(Debug, Serialize, Deserialize)]
pub struct KeyframeLine {
    pub demo_id: String,
    pub timesteps: Vec<u32>,
    pub actions: Vec<KeyframeActionLine>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct KeyframeActionLine {
    pub pos: [f64; 3],
    pub rpy: [f64; 3],
    pub gripper_open: bool,
}

impl From<&KeyActionSequence> for KeyframeLine {
    fn from(seq: &KeyActionSequence) -> Self {
        KeyframeLine {
            demo_id: seq.demo_id.clone(),
            timesteps: seq.timesteps(),
            actions: seq
                .actions()
                .map(|a| KeyframeActionLine {
                    pos: a.position,
                    rpy: a.rpy,
                    gripper_open: a.gripper_open,
                })
                .collect(),
        }
    }
}
