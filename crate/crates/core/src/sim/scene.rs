use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::demo_store::{ObjectRecord, Pose7, SimParams, Vec3};

#[derive(Debug, Clone, PartialEq)]
pub struct SceneObject {
    pub name: String,
    pub center: Vec3,
    pub initial: Vec3,
    pub color: [u8; 3],
    /// Shown once the object has been pressed.
    pub pressed_color: Option<[u8; 3]>,
    pub graspable: bool,
    pub attached: bool,
}

/// Axis-aligned receptacle region.
#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    pub name: String,
    pub center: Vec3,
    pub half_extent: Vec3,
    pub color: [u8; 3],
}

impl Region {
    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|i| (p[i] - self.center[i]).abs() <= self.half_extent[i])
    }
}

#[derive(Debug, Clone)]
pub struct SceneState {
    pub objects: Vec<SceneObject>,
    pub receptacles: Vec<Region>,
    pub gripper: Pose7,
    /// Objects touched by a closed, empty gripper.
    pub pressed: Vec<String>,
    pub params: SimParams,
    pub rng: ChaCha8Rng,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureReason {
    NoActions,
    OutOfWorkspace,
    PredicateFalse,
    ParseFailure,
}

pub fn distance(a: &Vec3, b: &Vec3) -> f64 {
    (0..3).map(|i| (a[i] - b[i]).powi(2)).sum::<f64>().sqrt()
}

impl SceneState {
    pub fn object(&self, name: &str) -> Option<&SceneObject> {
        self.objects.iter().find(|o| o.name == name)
    }

    pub fn region(&self, name: &str) -> Option<&Region> {
        self.receptacles.iter().find(|r| r.name == name)
    }

    pub fn attached(&self) -> Option<&SceneObject> {
        self.objects.iter().find(|o| o.attached)
    }

    /// Ground-truth object centers: objects first, then receptacles.
    pub fn object_records(&self) -> Vec<ObjectRecord> {
        self.objects
            .iter()
            .map(|o| (o.name.as_str(), o.center))
            .chain(self.receptacles.iter().map(|r| (r.name.as_str(), r.center)))
            .map(|(n, c)| ObjectRecord::new(n, c).expect("task objects have names"))
            .collect()
    }

    /// Teleport to `pose`, carrying any attached object, then apply a gripper change.
    pub fn apply_pose(&mut self, pose: &Pose7) {
        let was_open = self.gripper.gripper_open;
        self.gripper = *pose;
        let at = pose.position;
        if let Some(obj) = self.objects.iter_mut().find(|o| o.attached) {
            obj.center = at;
        }
        match (was_open, pose.gripper_open) {
            (true, false) => {
                let radius = self.params.grasp_radius;
                let nearest = self
                    .objects
                    .iter()
                    .enumerate()
                    .filter(|(_, o)| o.graspable && distance(&o.center, &at) <= radius)
                    .min_by(|a, b| distance(&a.1.center, &at).total_cmp(&distance(&b.1.center, &at)))
                    .map(|(i, _)| i);
                if let Some(i) = nearest {
                    self.objects[i].attached = true;
                    self.objects[i].center = at;
                }
            }
            (false, true) => {
                for o in self.objects.iter_mut() {
                    o.attached = false;
                }
            }
            _ => {}
        }
        if !self.gripper.gripper_open && self.attached().is_none() {
            let tol = self.params.region_tolerance;
            for o in &self.objects {
                if distance(&o.center, &at) <= tol && !self.pressed.contains(&o.name) {
                    self.pressed.push(o.name.clone());
                }
            }
        }
    }
}
