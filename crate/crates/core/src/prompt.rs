//! Textualization of demonstrations, prompt assembly, and parsing of model output.
//!
//! Template (every line ends in `\n`):
//!
//! ```text
//! <system prompt>
//!
//! Task: <language>
//! Objects: <name>: [x, y, z]; <name>: [x, y, z]
//! Actions:
//! [x, y, z, roll, pitch, yaw, gripper]
//! ...
//!
//! Task: <query language>
//! Objects: ...
//! Actions:
//! ```

use std::cmp::Ordering;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::demo_store::{Demonstration, ObjectRecord, WorkspaceBounds, DEFAULT_GRID_RESOLUTION};
use crate::discretizer::{quantize_object, quantize_pose, QuantizedObject, QuantizedPose, ANGLE_BINS};
use crate::keyframe::KeyActionSequence;

pub const TEMPLATE_VERSION: &str = "xicm-prompt/1";
pub const NO_OBJECTS: &str = "(no objects)";
pub const ACTIONS_HEADER: &str = "Actions:";

#[derive(Debug, Error, PartialEq)]
pub enum PromptError {
    #[error("no demonstrations selected")]
    EmptySelection,
    #[error("demonstration {0} has no key-actions")]
    NoKeyActions(String),
    #[error("no parsable action found in model output")]
    NoActionsFound,
    #[error("malformed object line `{0}`")]
    MalformedObject(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoBlock {
    pub demo_id: String,
    pub language: String,
    pub objects: Vec<QuantizedObject>,
    pub actions: Vec<QuantizedPose>,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub system_text: String,
    pub demo_blocks: Vec<DemoBlock>,
    pub query_language: String,
    pub query_objects: Vec<QuantizedObject>,
    pub rendered: String,
}

impl PromptBundle {
    pub fn new(
        system_text: String,
        mut demo_blocks: Vec<DemoBlock>,
        query_language: String,
        query_objects: Vec<QuantizedObject>,
    ) -> Self {
        demo_blocks.sort_by(block_order);
        let mut bundle = PromptBundle {
            system_text,
            demo_blocks,
            query_language,
            query_objects,
            rendered: String::new(),
        };
        bundle.rendered = bundle.render();
        bundle
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(&self.system_text);
        out.push_str("\n\n");
        for block in &self.demo_blocks {
            out.push_str(&textualize_demo(block));
            out.push_str("\n\n");
        }
        out.push_str(&textualize_query(&self.query_language, &self.query_objects));
        out.push('\n');
        out
    }

    /// Everything after the system prompt; sent as the single user message.
    pub fn user_text(&self) -> &str {
        let skip = self.system_text.len() + 2;
        self.rendered.get(skip..).unwrap_or("")
    }
}

fn block_order(a: &DemoBlock, b: &DemoBlock) -> Ordering {
    b.similarity
        .total_cmp(&a.similarity)
        .then_with(|| a.demo_id.cmp(&b.demo_id))
}

pub fn system_prompt(grid_resolution: u32) -> String {
    let top = grid_resolution - 1;
    let top_bin = ANGLE_BINS - 1;
    format!(
        "You are a robot manipulation planner. Each example below gives a task instruction, \
the objects in the scene, and the key-actions of the robot end-effector that complete the task.\n\
Object positions are written as name: [x, y, z] in a {grid_resolution}x{grid_resolution}x{grid_resolution} grid \
over the workspace, with every coordinate an integer from 0 to {top}.\n\
Each key-action is [x, y, z, roll, pitch, yaw, gripper]. x, y, z use the same grid. \
roll, pitch and yaw are angle bins from 0 to {top_bin}, each bin covering 5 degrees. \
gripper is 1 for open and 0 for closed.\n\
Study the examples, then write the key-actions for the last task. \
Output one bracketed key-action per line and nothing else."
    )
}

pub fn textualize_object(o: &QuantizedObject) -> String {
    format!("{}: [{}, {}, {}]", o.name, o.grid[0], o.grid[1], o.grid[2])
}

pub fn textualize_action(a: &QuantizedPose) -> String {
    let v = a.to_array();
    format!(
        "[{}, {}, {}, {}, {}, {}, {}]",
        v[0], v[1], v[2], v[3], v[4], v[5], v[6]
    )
}

fn objects_line(objects: &[QuantizedObject]) -> String {
    if objects.is_empty() {
        format!("Objects: {NO_OBJECTS}")
    } else {
        let parts: Vec<String> = objects.iter().map(textualize_object).collect();
        format!("Objects: {}", parts.join("; "))
    }
}

/// Renders a block without a trailing newline.
pub fn textualize_demo(block: &DemoBlock) -> String {
    let mut lines = vec![
        format!("Task: {}", block.language),
        objects_line(&block.objects),
        ACTIONS_HEADER.to_string(),
    ];
    lines.extend(block.actions.iter().map(textualize_action));
    lines.join("\n")
}

pub fn textualize_query(language: &str, objects: &[QuantizedObject]) -> String {
    format!("Task: {language}\n{}\n{ACTIONS_HEADER}", objects_line(objects))
}

pub struct SelectedDemo<'a> {
    pub demo: &'a Demonstration,
    pub keyframes: &'a KeyActionSequence,
    pub similarity: f64,
}

pub fn demo_block(selected: &SelectedDemo, ws: &WorkspaceBounds) -> Result<DemoBlock, PromptError> {
    if selected.keyframes.keyframes.is_empty() {
        return Err(PromptError::NoKeyActions(selected.demo.id.clone()));
    }
    Ok(DemoBlock {
        demo_id: selected.demo.id.clone(),
        language: selected.demo.language.clone(),
        objects: selected.demo.objects.iter().map(|o| quantize_object(o, ws)).collect(),
        actions: selected.keyframes.actions().map(|a| quantize_pose(a, ws)).collect(),
        similarity: selected.similarity,
    })
}

pub fn build_prompt(
    selected: &[SelectedDemo],
    query_language: &str,
    query_objects: &[ObjectRecord],
    ws: &WorkspaceBounds,
) -> Result<PromptBundle, PromptError> {
    if selected.is_empty() {
        return Err(PromptError::EmptySelection);
    }
    let blocks = selected
        .iter()
        .map(|s| demo_block(s, ws))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(PromptBundle::new(
        system_prompt(ws.grid_resolution),
        blocks,
        query_language.to_string(),
        query_objects.iter().map(|o| quantize_object(o, ws)).collect(),
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionPrediction {
    pub actions: Vec<QuantizedPose>,
    pub raw_text: String,
    pub parse_warnings: Vec<String>,
}

fn action_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        let int = r"\s*([+-]?\d+)\s*";
        let body = vec![int; 7].join(",");
        Regex::new(&format!(r"\[{body}\]")).expect("valid action regex")
    })
}

fn object_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"^\s*([^:\[\]]+?)\s*:\s*\[\s*(\d+)\s*,\s*(\d+)\s*,\s*(\d+)\s*\]\s*$")
            .expect("valid object regex")
    })
}

fn clamp_component(raw: &str, lo: i64, hi: i64, label: &str, index: usize, warnings: &mut Vec<String>) -> i64 {
    // digits too long for i64 saturate in the direction of their sign
    let value = raw.parse::<i64>().unwrap_or(if raw.starts_with('-') { i64::MIN } else { i64::MAX });
    if value < lo || value > hi {
        let clamped = value.clamp(lo, hi);
        warnings.push(format!(
            "action {index}: {label} {raw} outside [{lo}, {hi}], clamped to {clamped}"
        ));
        clamped
    } else {
        value
    }
}

pub struct ActionParser {
    pub grid_resolution: u32,
}

impl Default for ActionParser {
    fn default() -> Self {
        ActionParser {
            grid_resolution: DEFAULT_GRID_RESOLUTION,
        }
    }
}

impl ActionParser {
    pub fn new(grid_resolution: u32) -> Self {
        ActionParser { grid_resolution }
    }

    /// Extracts every `[a, b, c, d, e, f, g]` group in order of appearance.
    pub fn parse(&self, text: &str) -> Result<ActionPrediction, PromptError> {
        const LABELS: [&str; 7] = ["x", "y", "z", "roll", "pitch", "yaw", "gripper"];
        let grid_top = self.grid_resolution as i64 - 1;
        let bin_top = ANGLE_BINS as i64 - 1;
        let mut warnings = Vec::new();
        let mut actions = Vec::new();
        for caps in action_pattern().captures_iter(text) {
            let index = actions.len();
            let mut v = [0i64; 7];
            for (k, slot) in v.iter_mut().enumerate() {
                let hi = match k {
                    0..=2 => grid_top,
                    3..=5 => bin_top,
                    _ => 1,
                };
                *slot = clamp_component(&caps[k + 1], 0, hi, LABELS[k], index, &mut warnings);
            }
            let pose = QuantizedPose::from_array(v, self.grid_resolution).expect("components were clamped into range");
            actions.push(pose);
        }
        if actions.is_empty() {
            return Err(PromptError::NoActionsFound);
        }
        Ok(ActionPrediction {
            actions,
            raw_text: text.to_string(),
            parse_warnings: warnings,
        })
    }
}

pub fn parse_prediction(text: &str) -> Result<ActionPrediction, PromptError> {
    ActionParser::default().parse(text)
}

pub fn parse_object(line: &str) -> Result<QuantizedObject, PromptError> {
    let caps = object_pattern()
        .captures(line)
        .ok_or_else(|| PromptError::MalformedObject(line.to_string()))?;
    let coord = |i: usize| {
        caps[i]
            .parse::<u32>()
            .map_err(|_| PromptError::MalformedObject(line.to_string()))
    };
    Ok(QuantizedObject {
        name: caps[1].to_string(),
        grid: [coord(2)?, coord(3)?, coord(4)?],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pose(v: [i64; 7]) -> QuantizedPose {
        QuantizedPose::from_array(v, 100).unwrap()
    }

    fn obj(name: &str, grid: [u32; 3]) -> QuantizedObject {
        QuantizedObject {
            name: name.into(),
            grid,
        }
    }

    #[test]
    fn object_and_action_literals() {
        assert_eq!(textualize_object(&obj("block", [52, 50, 19])), "block: [52, 50, 19]");
        assert_eq!(textualize_object(&obj("lid", [0, 0, 0])), "lid: [0, 0, 0]");
        assert_eq!(textualize_action(&pose([53, 57, 17, 0, 36, 53, 0])), "[53, 57, 17, 0, 36, 53, 0]");
        assert_eq!(textualize_action(&pose([0; 7])), "[0, 0, 0, 0, 0, 0, 0]");
        let o = obj("block", [52, 50, 19]);
        assert_eq!(parse_object(&textualize_object(&o)).unwrap(), o);
    }

    #[test]
    fn demo_block_golden() {
        let block = DemoBlock {
            demo_id: "d".into(),
            language: "stack the block".into(),
            objects: vec![obj("block", [52, 50, 19])],
            actions: vec![pose([53, 57, 17, 0, 36, 53, 1]), pose([53, 57, 10, 0, 36, 53, 0])],
            similarity: 0.5,
        };
        let expected = "Task: stack the block\n\
                        Objects: block: [52, 50, 19]\n\
                        Actions:\n\
                        [53, 57, 17, 0, 36, 53, 1]\n\
                        [53, 57, 10, 0, 36, 53, 0]";
        assert_eq!(textualize_demo(&block), expected);
        assert_eq!(textualize_demo(&block).lines().count(), 5);
        assert_eq!(textualize_demo(&block), textualize_demo(&block.clone()));

        let empty = DemoBlock {
            objects: vec![],
            ..block
        };
        assert!(textualize_demo(&empty).contains("\nObjects: (no objects)\n"));
    }

    #[test]
    fn parses_fenced_and_inline_actions() {
        let p = parse_prediction("```\n[53, 57, 17, 0, 36, 53, 0]\n```").unwrap();
        assert_eq!(p.actions, vec![pose([53, 57, 17, 0, 36, 53, 0])]);
        assert!(p.parse_warnings.is_empty());

        let p = parse_prediction("The answer is: [1,2,3,4,5,6,1] then [7,8,9,10,11,12,0]").unwrap();
        assert_eq!(p.actions, vec![pose([1, 2, 3, 4, 5, 6, 1]), pose([7, 8, 9, 10, 11, 12, 0])]);

        assert_eq!(parse_prediction("I cannot help with that."), Err(PromptError::NoActionsFound));
    }

    #[test]
    fn out_of_range_components_clamp_with_warnings() {
        let p = parse_prediction("[120, -3, 5, 72, 0, 0, 2]\n[99999999999999999999999, 0, 0, 0, 0, 0, 1]").unwrap();
        assert_eq!(p.actions[0], pose([99, 0, 5, 71, 0, 0, 1]));
        assert_eq!(p.actions[1].grid[0], 99);
        assert_eq!(p.parse_warnings.len(), 5);
    }

    #[test]
    fn user_text_follows_system_prompt() {
        let b = PromptBundle::new("SYS".into(), vec![], "close the lid".into(), vec![]);
        assert_eq!(b.rendered, "SYS\n\nTask: close the lid\nObjects: (no objects)\nActions:\n");
        assert_eq!(b.user_text(), "Task: close the lid\nObjects: (no objects)\nActions:\n");
    }

    proptest! {
        #[test]
        fn parse_recovers_textualized_actions(
            raw in proptest::collection::vec(
                (proptest::array::uniform3(0i64..100), proptest::array::uniform3(0i64..72), 0i64..2),
                1..12),
            noise in proptest::collection::vec("[^\\[\\]]{0,20}", 13),
        ) {
            let actions: Vec<QuantizedPose> = raw
                .iter()
                .map(|(g, b, gr)| pose([g[0], g[1], g[2], b[0], b[1], b[2], *gr]))
                .collect();
            let mut text = noise[0].clone();
            for (i, a) in actions.iter().enumerate() {
                text.push_str(&textualize_action(a));
                text.push_str(&noise[i + 1]);
            }
            let parsed = parse_prediction(&text).unwrap();
            prop_assert_eq!(parsed.actions, actions);
        }
    }
}
