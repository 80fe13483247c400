//! Demonstration datasets: domain types, validation, and the on-disk layout.
//!
//! A dataset root holds `manifest.json` (workspace bounds, task list, encoding
//! conventions) and one `<task>.jsonl` file per task with one episode per
//! line. Loaded datasets are sorted by demonstration id, so the order in
//! which files are enumerated never changes the content.

use std::collections::BTreeSet;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub type Vec3 = [f64; 3];

pub const MANIFEST_FILE: &str = "manifest.json";
pub const DEFAULT_GRID_RESOLUTION: u32 = 100;
/// Integer written for an open gripper; closed is the complement.
pub const GRIPPER_OPEN_CODE: u8 = 1;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("manifest not found at {0}")]
    MissingManifest(PathBuf),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("schema violation in {file}:{line} at `{field}`: {message}")]
    Schema {
        file: PathBuf,
        line: usize,
        field: String,
        message: String,
    },
    #[error("episode {id} ({file}:{line}) has {observations} observations but {actions} actions")]
    LengthMismatch {
        file: PathBuf,
        line: usize,
        id: String,
        observations: usize,
        actions: usize,
    },
    #[error("duplicate demonstration id {0}")]
    DuplicateId(String),
    #[error("invalid workspace: {0}")]
    Workspace(String),
    #[error("invalid demonstration {id}: {message}")]
    Invalid { id: String, message: String },
}

impl DatasetError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        DatasetError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// Axis-aligned workspace in the robot base frame, divided into a uniform grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorkspaceBounds {
    pub min: Vec3,
    pub max: Vec3,
    #[serde(rename = "grid")]
    pub grid_resolution: u32,
}

impl WorkspaceBounds {
    pub fn new(min: Vec3, max: Vec3, grid_resolution: u32) -> Result<Self, DatasetError> {
        let ws = WorkspaceBounds {
            min,
            max,
            grid_resolution,
        };
        ws.validate()?;
        Ok(ws)
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        for axis in 0..3 {
            if !(self.min[axis].is_finite() && self.max[axis].is_finite()) {
                return Err(DatasetError::Workspace(format!("axis {axis} is not finite")));
            }
            if self.min[axis] >= self.max[axis] {
                return Err(DatasetError::Workspace(format!(
                    "axis {axis}: min {} must be below max {}",
                    self.min[axis], self.max[axis]
                )));
            }
        }
        if self.grid_resolution < 2 {
            return Err(DatasetError::Workspace(format!(
                "grid resolution {} must be at least 2",
                self.grid_resolution
            )));
        }
        Ok(())
    }

    pub fn extent(&self, axis: usize) -> f64 {
        self.max[axis] - self.min[axis]
    }

    pub fn cell_size(&self, axis: usize) -> f64 {
        self.extent(axis) / f64::from(self.grid_resolution)
    }

    pub fn midpoint(&self) -> Vec3 {
        [0, 1, 2].map(|i| 0.5 * (self.min[i] + self.max[i]))
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }
}

/// Wrap an angle in degrees into `[0, 360)`.
pub fn wrap_degrees(deg: f64) -> f64 {
    let wrapped = deg.rem_euclid(360.0);
    // rem_euclid can round up to exactly 360 for tiny negative inputs
    if wrapped >= 360.0 {
        0.0
    } else {
        wrapped
    }
}

/// End-effector state: position (m), roll/pitch/yaw (deg, wrapped) and gripper flag.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose7 {
    pub position: Vec3,
    pub rpy: Vec3,
    pub gripper_open: bool,
}

impl Pose7 {
    pub fn new(position: Vec3, rpy: Vec3, gripper_open: bool) -> Self {
        Pose7 {
            position,
            rpy: rpy.map(wrap_degrees),
            gripper_open,
        }
    }

    pub fn with_gripper(mut self, open: bool) -> Self {
        self.gripper_open = open;
        self
    }
}

/// Packed 8-bit RGB image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: u32,
    pub height: u32,
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: u32, height: u32, data: Vec<u8>) -> Result<Self, String> {
        let expected = width as usize * height as usize * 3;
        if data.len() != expected {
            return Err(format!(
                "buffer length {} does not match {width}x{height}x3 = {expected}",
                data.len()
            ));
        }
        Ok(RgbImage {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Self {
        let data = rgb
            .iter()
            .copied()
            .cycle()
            .take(width as usize * height as usize * 3)
            .collect();
        RgbImage {
            width,
            height,
            data,
        }
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub rgb: RgbImage,
    pub joint_velocities: Vec<f64>,
    pub gripper_open: bool,
    pub timestep: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectRecord {
    pub name: String,
    pub center: Vec3,
}

impl ObjectRecord {
    /// Lowercases the name; an empty name is rejected.
    pub fn new(name: &str, center: Vec3) -> Result<Self, String> {
        let name = name.trim().to_lowercase();
        if name.is_empty() {
            return Err("object name is empty".to_string());
        }
        Ok(ObjectRecord { name, center })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Demonstration {
    pub id: String,
    pub task_name: String,
    pub language: String,
    pub observations: Vec<Observation>,
    pub actions: Vec<Pose7>,
    /// Object centers at t = 0.
    pub objects: Vec<ObjectRecord>,
}

impl Demonstration {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn initial_observation(&self) -> &Observation {
        &self.observations[0]
    }

    pub fn final_observation(&self) -> &Observation {
        &self.observations[self.observations.len() - 1]
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        let invalid = |message: String| DatasetError::Invalid {
            id: self.id.clone(),
            message,
        };
        if self.id.is_empty() {
            return Err(invalid("empty id".into()));
        }
        if self.observations.len() != self.actions.len() {
            return Err(invalid(format!(
                "{} observations vs {} actions",
                self.observations.len(),
                self.actions.len()
            )));
        }
        if self.actions.len() < 2 {
            return Err(invalid("a demonstration needs at least 2 steps".into()));
        }
        for pair in self.observations.windows(2) {
            if pair[1].timestep <= pair[0].timestep {
                return Err(invalid(format!(
                    "timestep {} does not increase after {}",
                    pair[1].timestep, pair[0].timestep
                )));
            }
        }
        for obs in &self.observations {
            let rgb = &obs.rgb;
            if rgb.data.len() != rgb.width as usize * rgb.height as usize * 3 {
                return Err(invalid(format!("image at t={} has wrong size", obs.timestep)));
            }
        }
        for o in &self.objects {
            if o.name.is_empty() || o.name != o.name.to_lowercase() {
                return Err(invalid(format!("object name `{}` is not normalized", o.name)));
            }
        }
        Ok(())
    }
}

/// Simulation parameters recorded alongside a generated dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimParams {
    pub grasp_radius: f64,
    pub region_tolerance: f64,
}

impl Default for SimParams {
    fn default() -> Self {
        SimParams {
            grasp_radius: 0.05,
            region_tolerance: 0.04,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub workspace: WorkspaceBounds,
    pub tasks: Vec<String>,
    #[serde(default = "default_gripper_code")]
    pub gripper_open_code: u8,
    #[serde(default = "default_epsilon")]
    pub velocity_epsilon: f64,
    #[serde(default)]
    pub sim: SimParams,
}

fn default_gripper_code() -> u8 {
    GRIPPER_OPEN_CODE
}

fn default_epsilon() -> f64 {
    crate::keyframe::DEFAULT_VELOCITY_EPSILON
}

impl Manifest {
    pub fn new(workspace: WorkspaceBounds, tasks: Vec<String>) -> Self {
        Manifest {
            workspace,
            tasks,
            gripper_open_code: GRIPPER_OPEN_CODE,
            velocity_epsilon: default_epsilon(),
            sim: SimParams::default(),
        }
    }
}

/// An immutable, validated set of demonstrations sorted by id.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    manifest: Manifest,
    demos: Vec<Demonstration>,
}

impl Dataset {
    pub fn new(manifest: Manifest, mut demos: Vec<Demonstration>) -> Result<Self, DatasetError> {
        manifest.workspace.validate()?;
        if manifest.gripper_open_code != GRIPPER_OPEN_CODE {
            return Err(DatasetError::Workspace(format!(
                "unsupported gripper encoding {} (expected open = {GRIPPER_OPEN_CODE})",
                manifest.gripper_open_code
            )));
        }
        demos.sort_by(|a, b| a.id.cmp(&b.id));
        for pair in demos.windows(2) {
            if pair[0].id == pair[1].id {
                return Err(DatasetError::DuplicateId(pair[0].id.clone()));
            }
        }
        for d in &demos {
            d.validate()?;
        }
        Ok(Dataset { manifest, demos })
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn workspace(&self) -> &WorkspaceBounds {
        &self.manifest.workspace
    }

    pub fn demos(&self) -> &[Demonstration] {
        &self.demos
    }

    pub fn len(&self) -> usize {
        self.demos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.demos.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Demonstration> {
        self.demos
            .binary_search_by(|d| d.id.as_str().cmp(id))
            .ok()
            .map(|i| &self.demos[i])
    }

    /// SHA-256 over the canonical serialization (manifest, then episodes by id).
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(serde_json::to_vec(&self.manifest).expect("manifest serializes"));
        for d in &self.demos {
            hasher.update(b"\n");
            hasher.update(serde_json::to_vec(&EpisodeRecord::from(d)).expect("episode serializes"));
        }
        hex_string(&hasher.finalize())
    }
}

pub(crate) fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

// ---- wire format ----

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EpisodeRecord {
    id: String,
    task: String,
    language: String,
    objects: Vec<ObjectWire>,
    steps: Vec<StepWire>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ObjectWire {
    name: String,
    center: Vec3,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StepWire {
    t: u32,
    rgb: RgbWire,
    joint_vel: Vec<f64>,
    gripper_open: bool,
    action: ActionWire,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RgbWire {
    w: u32,
    h: u32,
    data_b64: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ActionWire {
    pos: Vec3,
    rpy: Vec3,
    gripper_open: bool,
}

impl From<&Demonstration> for EpisodeRecord {
    fn from(d: &Demonstration) -> Self {
        EpisodeRecord {
            id: d.id.clone(),
            task: d.task_name.clone(),
            language: d.language.clone(),
            objects: d
                .objects
                .iter()
                .map(|o| ObjectWire {
                    name: o.name.clone(),
                    center: o.center,
                })
                .collect(),
            steps: d
                .observations
                .iter()
                .zip(&d.actions)
                .map(|(obs, act)| StepWire {
                    t: obs.timestep,
                    rgb: RgbWire {
                        w: obs.rgb.width,
                        h: obs.rgb.height,
                        data_b64: B64.encode(&obs.rgb.data),
                    },
                    joint_vel: obs.joint_velocities.clone(),
                    gripper_open: obs.gripper_open,
                    action: ActionWire {
                        pos: act.position,
                        rpy: act.rpy,
                        gripper_open: act.gripper_open,
                    },
                })
                .collect(),
        }
    }
}

struct LineContext<'a> {
    file: &'a Path,
    line: usize,
}

impl LineContext<'_> {
    fn schema(&self, field: impl Into<String>, message: impl Into<String>) -> DatasetError {
        DatasetError::Schema {
            file: self.file.to_path_buf(),
            line: self.line,
            field: field.into(),
            message: message.into(),
        }
    }
}

fn episode_from_record(rec: EpisodeRecord, ctx: &LineContext) -> Result<Demonstration, DatasetError> {
    if rec.id.is_empty() {
        return Err(ctx.schema("id", "must be non-empty"));
    }
    let objects = rec
        .objects
        .iter()
        .enumerate()
        .map(|(i, o)| {
            ObjectRecord::new(&o.name, o.center).map_err(|m| ctx.schema(format!("objects[{i}].name"), m))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut observations = Vec::with_capacity(rec.steps.len());
    let mut actions = Vec::with_capacity(rec.steps.len());
    for (i, step) in rec.steps.into_iter().enumerate() {
        let data = B64
            .decode(step.rgb.data_b64.as_bytes())
            .map_err(|e| ctx.schema(format!("steps[{i}].rgb.data_b64"), e.to_string()))?;
        let rgb = RgbImage::new(step.rgb.w, step.rgb.h, data)
            .map_err(|m| ctx.schema(format!("steps[{i}].rgb"), m))?;
        if let Some(prev) = observations.last().map(|o: &Observation| o.timestep) {
            if step.t <= prev {
                return Err(ctx.schema(format!("steps[{i}].t"), format!("{} does not increase after {prev}", step.t)));
            }
        }
        if step.joint_vel.iter().any(|v| !v.is_finite()) {
            return Err(ctx.schema(format!("steps[{i}].joint_vel"), "non-finite value"));
        }
        observations.push(Observation {
            rgb,
            joint_velocities: step.joint_vel,
            gripper_open: step.gripper_open,
            timestep: step.t,
        });
        actions.push(Pose7::new(step.action.pos, step.action.rpy, step.action.gripper_open));
    }
    if actions.len() < 2 {
        return Err(ctx.schema("steps", format!("need at least 2 steps, found {}", actions.len())));
    }
    Ok(Demonstration {
        id: rec.id,
        task_name: rec.task,
        language: rec.language,
        observations,
        actions,
        objects,
    })
}

/// Quick structural check ahead of full decoding, so a step-count mismatch is
/// reported as such rather than as a generic schema error.
fn check_lengths(value: &serde_json::Value, ctx: &LineContext) -> Result<(), DatasetError> {
    let Some(steps) = value.get("steps").and_then(|s| s.as_array()) else {
        return Ok(());
    };
    let with_action = steps.iter().filter(|s| s.get("action").is_some()).count();
    let with_obs = steps.iter().filter(|s| s.get("rgb").is_some()).count();
    if with_action != with_obs {
        let id = value
            .get("id")
            .and_then(|v| v.as_str())
            .unwrap_or("<unknown>")
            .to_string();
        return Err(DatasetError::LengthMismatch {
            file: ctx.file.to_path_buf(),
            line: ctx.line,
            id,
            observations: with_obs,
            actions: with_action,
        });
    }
    Ok(())
}

fn parse_episode_line(text: &str, ctx: &LineContext) -> Result<Demonstration, DatasetError> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| ctx.schema("<line>", e.to_string()))?;
    check_lengths(&value, ctx)?;
    let record: EpisodeRecord = serde_path_to_error::deserialize(value).map_err(|e| {
        let field = e.path().to_string();
        ctx.schema(field, e.into_inner().to_string())
    })?;
    episode_from_record(record, ctx)
}

fn load_task_file(path: &Path) -> Result<Vec<Demonstration>, DatasetError> {
    let file = fs::File::open(path).map_err(|e| DatasetError::io(path, e))?;
    let mut demos = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| DatasetError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let ctx = LineContext {
            file: path,
            line: i + 1,
        };
        demos.push(parse_episode_line(&line, &ctx)?);
    }
    Ok(demos)
}

/// Load and validate a dataset root. Task files are read in parallel.
pub fn load_dataset(root: impl AsRef<Path>) -> Result<Dataset, DatasetError> {
    let root = root.as_ref();
    let manifest_path = root.join(MANIFEST_FILE);
    if !manifest_path.is_file() {
        return Err(DatasetError::MissingManifest(manifest_path));
    }
    let text = fs::read_to_string(&manifest_path).map_err(|e| DatasetError::io(&manifest_path, e))?;
    let manifest: Manifest = {
        let mut de = serde_json::Deserializer::from_str(&text);
        serde_path_to_error::deserialize(&mut de).map_err(|e| DatasetError::Schema {
            file: manifest_path.clone(),
            line: e.inner().line(),
            field: e.path().to_string(),
            message: e.inner().to_string(),
        })?
    };
    manifest.workspace.validate()?;

    let unique: BTreeSet<&String> = manifest.tasks.iter().collect();
    let per_file: Vec<Vec<Demonstration>> = unique
        .into_par_iter()
        .map(|task| load_task_file(&root.join(format!("{task}.jsonl"))))
        .collect::<Result<_, _>>()?;
    let demos = per_file.into_iter().flatten().collect();
    let dataset = Dataset::new(manifest, demos)?;
    log::debug!("loaded {} demonstrations from {}", dataset.len(), root.display());
    Ok(dataset)
}

/// Write the dataset under `root`, creating the directory if needed.
pub fn save_dataset(dataset: &Dataset, root: impl AsRef<Path>) -> Result<(), DatasetError> {
    let root = root.as_ref();
    fs::create_dir_all(root).map_err(|e| DatasetError::io(root, e))?;
    let manifest_path = root.join(MANIFEST_FILE);
    let manifest = serde_json::to_string_pretty(&dataset.manifest).expect("manifest serializes");
    fs::write(&manifest_path, manifest + "\n").map_err(|e| DatasetError::io(&manifest_path, e))?;

    let tasks: BTreeSet<&String> = dataset.manifest.tasks.iter().collect();
    for task in tasks {
        let path = root.join(format!("{task}.jsonl"));
        let file = fs::File::create(&path).map_err(|e| DatasetError::io(&path, e))?;
        let mut out = BufWriter::new(file);
        for demo in dataset.demos.iter().filter(|d| &d.task_name == task) {
            serde_json::to_writer(&mut out, &EpisodeRecord::from(demo))
                .map_err(|e| DatasetError::io(&path, e.into()))?;
            out.write_all(b"\n").map_err(|e| DatasetError::io(&path, e))?;
        }
        out.flush().map_err(|e| DatasetError::io(&path, e))?;
    }
    let orphan = dataset
        .demos
        .iter()
        .find(|d| !dataset.manifest.tasks.contains(&d.task_name));
    if let Some(d) = orphan {
        return Err(DatasetError::Invalid {
            id: d.id.clone(),
            message: format!("task `{}` is missing from the manifest task list", d.task_name),
        });
    }
    Ok(())
}
