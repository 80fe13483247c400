//! Desk-scale task library.
//!
//! Every unseen task is laid out on the same stations as at most one seen
//! task. Copying that seen task's key-actions solves the unseen task; copying
//! any other task's key-actions does not.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::scene::{distance, Region, SceneObject, SceneState};
use crate::demo_store::{Pose7, SimParams, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskLevel {
    Seen,
    UnseenLevel1,
    UnseenLevel2,
}

impl TaskLevel {
    pub fn name(self) -> &'static str {
        match self {
            TaskLevel::Seen => "seen",
            TaskLevel::UnseenLevel1 => "unseen_level1",
            TaskLevel::UnseenLevel2 => "unseen_level2",
        }
    }
}

/// Home pose of the end-effector at the start of every episode.
pub const HOME: Pose7 = Pose7 {
    position: [0.5, 0.0, 0.35],
    rpy: [0.0, 180.0, 0.0],
    gripper_open: true,
};
/// Jitter applied to every station, meters, per horizontal axis.
pub const STATION_JITTER: f64 = 0.01;
const APPROACH_HEIGHT: f64 = 0.10;

#[derive(Debug, Clone)]
pub struct ObjectSpec {
    pub name: &'static str,
    pub anchor: Vec3,
    pub color: [u8; 3],
    pub graspable: bool,
    pub pressed_color: Option<[u8; 3]>,
}

#[derive(Debug, Clone)]
pub struct RegionSpec {
    pub name: &'static str,
    pub anchor: Vec3,
    pub half_extent: Vec3,
    pub color: [u8; 3],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Carry {
    Lift,
    Slide,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Goal {
    /// Touch the object with a closed, empty gripper.
    Press { object: &'static str },
    /// Rest `object` at `height` above the center of `base`.
    PlaceOn { object: &'static str, base: &'static str, height: f64 },
    /// Release `object` inside a receptacle region.
    InRegion { object: &'static str, region: &'static str, carry: Carry },
    /// Move `object` along `axis` by at least `min_delta` (signed).
    Displace { object: &'static str, axis: usize, min_delta: f64, stroke: f64 },
}

#[derive(Debug, Clone)]
pub struct TaskSpec {
    pub name: &'static str,
    pub level: TaskLevel,
    pub language: &'static str,
    /// Motion verb and object nouns, audited for the level partition.
    pub verb: &'static str,
    pub nouns: Vec<&'static str>,
    pub objects: Vec<ObjectSpec>,
    pub regions: Vec<RegionSpec>,
    pub goal: Goal,
    pub yaw: f64,
}

fn obj(name: &'static str, anchor: Vec3, color: [u8; 3]) -> ObjectSpec {
    ObjectSpec {
        name,
        anchor,
        color,
        graspable: true,
        pressed_color: None,
    }
}

fn fixed(name: &'static str, anchor: Vec3, color: [u8; 3]) -> ObjectSpec {
    ObjectSpec {
        graspable: false,
        ..obj(name, anchor, color)
    }
}

fn button(name: &'static str, anchor: Vec3, color: [u8; 3]) -> ObjectSpec {
    ObjectSpec {
        pressed_color: Some([255, 220, 60]),
        ..fixed(name, anchor, color)
    }
}

fn region(name: &'static str, anchor: Vec3, half_extent: Vec3, color: [u8; 3]) -> RegionSpec {
    RegionSpec {
        name,
        anchor,
        half_extent,
        color,
    }
}

// Shared stations.
const BUTTON_AT: Vec3 = [0.20, -0.35, 0.02];
const STACK_TOP_AT: Vec3 = [0.35, -0.15, 0.02];
const STACK_BASE_AT: Vec3 = [0.35, 0.10, 0.02];
const BIN_BLOCK_AT: Vec3 = [0.60, -0.35, 0.02];
const BIN_AT: Vec3 = [0.85, -0.30, 0.05];
const BIN_HALF: Vec3 = [0.06, 0.06, 0.05];
const HANDLE_AT: Vec3 = [0.15, 0.30, 0.08];
const LID_AT: Vec3 = [0.55, 0.00, 0.02];
const POT_AT: Vec3 = [0.72, 0.18, 0.04];
const CUP_AT: Vec3 = [0.35, 0.32, 0.04];
const RACK_AT: Vec3 = [0.55, 0.38, 0.10];

pub fn task_library() -> Vec<TaskSpec> {
    use Goal::*;
    use TaskLevel::*;
    vec![
        TaskSpec {
            name: "push_button",
            level: Seen,
            language: "push the button",
            verb: "push",
            nouns: vec!["button"],
            objects: vec![button("button", BUTTON_AT, [200, 40, 40])],
            regions: vec![],
            goal: Press { object: "button" },
            yaw: 0.0,
        },
        TaskSpec {
            name: "stack_block",
            level: Seen,
            language: "stack the red block on the green block",
            verb: "stack",
            nouns: vec!["block"],
            objects: vec![
                obj("red block", STACK_TOP_AT, [220, 50, 50]),
                fixed("green block", STACK_BASE_AT, [50, 200, 50]),
            ],
            regions: vec![],
            goal: PlaceOn { object: "red block", base: "green block", height: 0.04 },
            yaw: 0.0,
        },
        TaskSpec {
            name: "put_block_in_bin",
            level: Seen,
            language: "put the block in the bin",
            verb: "put",
            nouns: vec!["block", "bin"],
            objects: vec![obj("block", BIN_BLOCK_AT, [60, 90, 220])],
            regions: vec![region("bin", BIN_AT, BIN_HALF, [120, 120, 140])],
            goal: InRegion { object: "block", region: "bin", carry: Carry::Lift },
            yaw: 0.0,
        },
        TaskSpec {
            name: "open_drawer",
            level: Seen,
            language: "open the drawer",
            verb: "open",
            nouns: vec!["drawer"],
            objects: vec![obj("drawer", HANDLE_AT, [180, 140, 60])],
            regions: vec![],
            goal: Displace { object: "drawer", axis: 0, min_delta: 0.10, stroke: 0.15 },
            yaw: 90.0,
        },
        TaskSpec {
            name: "close_lid_seen",
            level: Seen,
            language: "close the lid",
            verb: "close",
            nouns: vec!["lid", "pot"],
            objects: vec![obj("lid", LID_AT, [200, 200, 60]), fixed("pot", POT_AT, [140, 70, 40])],
            regions: vec![],
            goal: PlaceOn { object: "lid", base: "pot", height: 0.06 },
            yaw: 0.0,
        },
        TaskSpec {
            name: "place_cup_on_rack",
            level: Seen,
            language: "place the cup on the rack",
            verb: "place",
            nouns: vec!["cup", "rack"],
            objects: vec![obj("cup", CUP_AT, [230, 230, 230])],
            regions: vec![region("rack", RACK_AT, [0.06, 0.05, 0.05], [90, 60, 30])],
            goal: InRegion { object: "cup", region: "rack", carry: Carry::Lift },
            yaw: 265.0,
        },
        TaskSpec {
            name: "slide_block_to_zone",
            level: Seen,
            language: "slide the block to the zone",
            verb: "slide",
            nouns: vec!["block", "zone"],
            objects: vec![obj("block", [0.88, 0.02, 0.02], [60, 200, 200])],
            regions: vec![region("zone", [0.88, 0.25, 0.02], [0.06, 0.06, 0.03], [40, 80, 40])],
            goal: InRegion { object: "block", region: "zone", carry: Carry::Slide },
            yaw: 0.0,
        },
        TaskSpec {
            name: "put_item_in_drawer",
            level: Seen,
            language: "put the item in the drawer",
            verb: "put",
            nouns: vec!["item", "drawer"],
            objects: vec![obj("item", [0.15, -0.05, 0.02], [200, 100, 200])],
            regions: vec![region("drawer", [0.10, -0.20, 0.05], [0.06, 0.05, 0.05], [110, 80, 50])],
            goal: InRegion { object: "item", region: "drawer", carry: Carry::Lift },
            yaw: 90.0,
        },
        // level 1: shares an object noun or a verb with a seen task
        TaskSpec {
            name: "put_block_on_shelf",
            level: UnseenLevel1,
            language: "put the block on the shelf",
            verb: "put",
            nouns: vec!["block", "shelf"],
            objects: vec![obj("block", BIN_BLOCK_AT, [60, 90, 220])],
            regions: vec![region("shelf", BIN_AT, BIN_HALF, [130, 110, 150])],
            goal: InRegion { object: "block", region: "shelf", carry: Carry::Lift },
            yaw: 0.0,
        },
        TaskSpec {
            name: "push_lever",
            level: UnseenLevel1,
            language: "push the lever",
            verb: "push",
            nouns: vec!["lever"],
            objects: vec![button("lever", BUTTON_AT, [210, 60, 50])],
            regions: vec![],
            goal: Press { object: "lever" },
            yaw: 0.0,
        },
        TaskSpec {
            name: "close_drawer",
            level: UnseenLevel1,
            language: "close the drawer",
            verb: "close",
            nouns: vec!["drawer"],
            objects: vec![obj("drawer", [0.30, 0.30, 0.08], [180, 140, 60])],
            regions: vec![],
            goal: Displace { object: "drawer", axis: 0, min_delta: -0.10, stroke: -0.15 },
            yaw: 90.0,
        },
        TaskSpec {
            name: "stack_cup_on_bowl",
            level: UnseenLevel1,
            language: "stack the cup on the bowl",
            verb: "stack",
            nouns: vec!["cup", "bowl"],
            objects: vec![
                obj("cup", CUP_AT, [230, 230, 230]),
                fixed("bowl", [RACK_AT[0], RACK_AT[1], 0.04], [90, 60, 30]),
            ],
            regions: vec![],
            goal: PlaceOn { object: "cup", base: "bowl", height: 0.06 },
            yaw: 265.0,
        },
        // level 2: no shared noun or verb
        TaskSpec {
            name: "hang_ring_on_peg",
            level: UnseenLevel2,
            language: "hang the ring on the peg",
            verb: "hang",
            nouns: vec!["ring", "peg"],
            objects: vec![obj("ring", LID_AT, [210, 210, 70]), fixed("peg", POT_AT, [130, 80, 50])],
            regions: vec![],
            goal: PlaceOn { object: "ring", base: "peg", height: 0.06 },
            yaw: 0.0,
        },
        TaskSpec {
            name: "lift_kettle_onto_stove",
            level: UnseenLevel2,
            language: "lift the kettle onto the stove",
            verb: "lift",
            nouns: vec!["kettle", "stove"],
            objects: vec![
                obj("kettle", STACK_TOP_AT, [210, 60, 60]),
                fixed("stove", STACK_BASE_AT, [60, 190, 60]),
            ],
            regions: vec![],
            goal: PlaceOn { object: "kettle", base: "stove", height: 0.04 },
            yaw: 0.0,
        },
        TaskSpec {
            name: "toss_ball_into_basket",
            level: UnseenLevel2,
            language: "toss the ball into the basket",
            verb: "toss",
            nouns: vec!["ball", "basket"],
            objects: vec![obj("ball", [0.75, -0.10, 0.03], [255, 140, 0])],
            regions: vec![region("basket", [0.50, -0.20, 0.06], [0.05, 0.05, 0.06], [70, 70, 160])],
            goal: InRegion { object: "ball", region: "basket", carry: Carry::Lift },
            yaw: 0.0,
        },
    ]
}

pub fn find_task(name: &str) -> Option<TaskSpec> {
    task_library().into_iter().find(|t| t.name == name)
}

/// Resolve a task selector: `seen`, `unseen`, `unseen_level1`, `unseen_level2`,
/// `all`, or a comma-separated list of task names.
pub fn resolve_tasks(selector: &str) -> Result<Vec<TaskSpec>, String> {
    let lib = task_library();
    let pick = |f: &dyn Fn(&TaskSpec) -> bool| lib.iter().filter(|t| f(t)).cloned().collect::<Vec<_>>();
    match selector.trim() {
        "all" => Ok(lib.clone()),
        "seen" => Ok(pick(&|t| t.level == TaskLevel::Seen)),
        "unseen" => Ok(pick(&|t| t.level != TaskLevel::Seen)),
        "unseen_level1" => Ok(pick(&|t| t.level == TaskLevel::UnseenLevel1)),
        "unseen_level2" => Ok(pick(&|t| t.level == TaskLevel::UnseenLevel2)),
        list => list
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|name| find_task(name).ok_or_else(|| format!("unknown task `{name}`")))
            .collect::<Result<Vec<_>, _>>()
            .and_then(|v| if v.is_empty() { Err("empty task list".into()) } else { Ok(v) }),
    }
}

fn offset(p: Vec3, dx: f64, dy: f64, dz: f64) -> Vec3 {
    [p[0] + dx, p[1] + dy, p[2] + dz]
}

impl TaskSpec {
    pub fn sample_scene(&self, seed: u64, params: SimParams) -> SceneState {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut jitter = |p: Vec3| {
            let dx = rng.gen_range(-STATION_JITTER..=STATION_JITTER);
            let dy = rng.gen_range(-STATION_JITTER..=STATION_JITTER);
            offset(p, dx, dy, 0.0)
        };
        let objects = self
            .objects
            .iter()
            .map(|s| {
                let c = jitter(s.anchor);
                SceneObject {
                    name: s.name.to_string(),
                    center: c,
                    initial: c,
                    color: s.color,
                    pressed_color: s.pressed_color,
                    graspable: s.graspable,
                    attached: false,
                }
            })
            .collect();
        let receptacles = self
            .regions
            .iter()
            .map(|r| Region {
                name: r.name.to_string(),
                center: jitter(r.anchor),
                half_extent: r.half_extent,
                color: r.color,
            })
            .collect();
        SceneState {
            objects,
            receptacles,
            gripper: HOME,
            pressed: Vec::new(),
            params,
            rng,
        }
    }

    pub fn success(&self, scene: &SceneState) -> bool {
        let tol = scene.params.region_tolerance;
        match &self.goal {
            Goal::Press { object } => scene.pressed.iter().any(|p| p == object),
            Goal::PlaceOn { object, base, height } => {
                match (scene.object(object), scene.object(base)) {
                    (Some(o), Some(b)) => !o.attached && distance(&o.center, &offset(b.center, 0.0, 0.0, *height)) <= tol,
                    _ => false,
                }
            }
            Goal::InRegion { object, region, .. } => match (scene.object(object), scene.region(region)) {
                (Some(o), Some(r)) => !o.attached && r.contains(&o.center),
                _ => false,
            },
            Goal::Displace { object, axis, min_delta, .. } => match scene.object(object) {
                Some(o) => {
                    let moved = o.center[*axis] - o.initial[*axis];
                    !o.attached && moved * min_delta.signum() >= min_delta.abs()
                }
                None => false,
            },
        }
    }

    fn pose(&self, p: Vec3, open: bool) -> Pose7 {
        Pose7::new(p, [0.0, 180.0, self.yaw], open)
    }

    /// Key-actions that solve the task from `scene`'s initial layout.
    pub fn oracle_keyactions(&self, scene: &SceneState) -> Vec<Pose7> {
        let center = |name: &str| scene.object(name).map(|o| o.center).expect("goal object exists");
        let up = APPROACH_HEIGHT;
        match &self.goal {
            Goal::Press { object } => {
                let p = center(object);
                vec![
                    self.pose(offset(p, 0.0, 0.0, up), false),
                    self.pose(offset(p, 0.0, 0.0, 0.01), false),
                    self.pose(offset(p, 0.0, 0.0, up), false),
                ]
            }
            Goal::PlaceOn { object, base, height } => {
                let target = offset(center(base), 0.0, 0.0, *height);
                self.pick_and_release(center(object), target, Carry::Lift)
            }
            Goal::InRegion { object, region, carry } => {
                let r = scene.region(region).expect("goal region exists");
                let target = match carry {
                    Carry::Lift => r.center,
                    Carry::Slide => [r.center[0], r.center[1], center(object)[2]],
                };
                self.pick_and_release(center(object), target, *carry)
            }
            Goal::Displace { object, axis, stroke, .. } => {
                let p = center(object);
                let mut end = p;
                end[*axis] += stroke;
                vec![
                    self.pose(offset(p, 0.0, 0.0, up), true),
                    self.pose(p, true),
                    self.pose(p, false),
                    self.pose(end, false),
                    self.pose(end, true),
                    self.pose(offset(end, 0.0, 0.0, up), true),
                ]
            }
        }
    }

    fn pick_and_release(&self, from: Vec3, to: Vec3, carry: Carry) -> Vec<Pose7> {
        let up = APPROACH_HEIGHT;
        let mut path = vec![
            self.pose(offset(from, 0.0, 0.0, up), true),
            self.pose(from, true),
            self.pose(from, false),
        ];
        if carry == Carry::Lift {
            path.push(self.pose(offset(from, 0.0, 0.0, up), false));
            path.push(self.pose(offset(to, 0.0, 0.0, up), false));
        }
        path.push(self.pose(to, false));
        path.push(self.pose(to, true));
        path.push(self.pose(offset(to, 0.0, 0.0, up), true));
        path
    }

    /// The demonstration policy; only seen tasks have one.
    pub fn scripted_policy(&self, scene: &SceneState) -> Option<Vec<Pose7>> {
        (self.level == TaskLevel::Seen).then(|| self.oracle_keyactions(scene))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    #[test]
    fn library_shape() {
        let lib = task_library();
        let count = |l: TaskLevel| lib.iter().filter(|t| t.level == l).count();
        assert_eq!(
            (count(TaskLevel::Seen), count(TaskLevel::UnseenLevel1), count(TaskLevel::UnseenLevel2)),
            (8, 4, 3)
        );
        let names: BTreeSet<_> = lib.iter().map(|t| t.name).collect();
        assert_eq!(names.len(), lib.len());
    }

    fn vocabulary(t: &TaskSpec) -> BTreeSet<&'static str> {
        let scene_names = t
            .objects
            .iter()
            .map(|o| o.name)
            .chain(t.regions.iter().map(|r| r.name))
            .flat_map(str::split_whitespace);
        t.nouns.iter().copied().chain(scene_names).collect()
    }

    #[test]
    fn vocabulary_audit() {
        let lib = task_library();
        let seen: Vec<&TaskSpec> = lib.iter().filter(|t| t.level == TaskLevel::Seen).collect();
        let seen_verbs: BTreeSet<&str> = seen.iter().map(|t| t.verb).collect();
        let seen_nouns: BTreeSet<&str> = seen.iter().flat_map(|t| vocabulary(t)).collect();
        for t in lib.iter().filter(|t| t.level != TaskLevel::Seen) {
            let shares = seen_verbs.contains(t.verb) || vocabulary(t).iter().any(|n| seen_nouns.contains(n));
            match t.level {
                TaskLevel::UnseenLevel1 => assert!(shares, "{} must share a verb or noun", t.name),
                TaskLevel::UnseenLevel2 => assert!(!shares, "{} must share nothing", t.name),
                TaskLevel::Seen => unreachable!(),
            }
        }
        // the audited verb is what the instruction says; nouns name scene objects
        for t in &lib {
            let words: Vec<&str> = t.language.split_whitespace().collect();
            assert!(words.contains(&t.verb), "{}", t.name);
            let scene = vocabulary(t);
            for n in &t.nouns {
                assert!(words.contains(n) || scene.contains(n), "{} / {n}", t.name);
            }
        }
    }

    #[test]
    fn task_selectors() {
        assert_eq!(resolve_tasks("seen").unwrap().len(), 8);
        assert_eq!(resolve_tasks("unseen").unwrap().len(), 7);
        assert_eq!(resolve_tasks("all").unwrap().len(), 15);
        assert_eq!(resolve_tasks("push_lever, push_button").unwrap()[1].name, "push_button");
        assert!(resolve_tasks("fly_away").is_err());
    }

    #[test]
    fn scripted_policy_only_for_seen() {
        let seen = find_task("push_button").unwrap();
        let unseen = find_task("push_lever").unwrap();
        let s = seen.sample_scene(1, SimParams::default());
        assert!(seen.scripted_policy(&s).is_some());
        assert!(unseen.scripted_policy(&unseen.sample_scene(1, SimParams::default())).is_none());
    }
}
