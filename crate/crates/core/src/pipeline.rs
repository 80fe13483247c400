//! End-to-end cross-task prediction: embed the query, select seen
//! demonstrations, build the prompt, query a backend, parse, execute.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::demo_store::{Dataset, ObjectRecord, Observation, WorkspaceBounds};
use crate::discretizer::quantize_pose;
use crate::dynamics::{
    dynamics_feature, embed_dataset, select_random, select_top_k, DynamicsError, DynamicsPredictor, FeatureInput,
    FeatureMode, FeatureTable, SelectionResult,
};
use crate::gateway::{CompletionBackend, CompletionRecord, EchoNearestBackend, GatewayError, HttpBackend, ScriptedBackend};
use crate::keyframe::{extract_keyframes, KeyActionSequence};
use crate::prompt::{build_prompt, textualize_action, ActionParser, ActionPrediction, PromptBundle, PromptError, SelectedDemo};
use crate::seeds::derive_seed;
use crate::sim::{execute_actions, render, FailureReason, RolloutResult, SceneState, TaskSpec, DEFAULT_IMAGE_SIZE};

pub const DEFAULT_K: usize = 18;
pub const PROSE_RESPONSE: &str = "I am sorry, but I cannot determine the actions for this task.";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("gateway error in {task} (episode seed {seed}): {source}")]
    Gateway {
        task: String,
        seed: u64,
        #[source]
        source: GatewayError,
    },
    #[error("pool features do not match the dataset: {0}")]
    PoolMismatch(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    #[default]
    Dynamics,
    Random,
}

impl std::str::FromStr for SelectionMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "dynamics" => Ok(SelectionMode::Dynamics),
            "random" => Ok(SelectionMode::Random),
            other => Err(format!("unknown selection mode `{other}` (dynamics|random)")),
        }
    }
}

/// Where completions come from.
#[derive(Clone)]
pub enum Backend {
    /// Copies the most similar demonstration's key-actions.
    Echo,
    /// Replays the task's own oracle key-actions for the episode's scene.
    Oracle,
    /// The same text for every prompt.
    Fixed { label: String, text: String },
    Http(Arc<HttpBackend>),
}

impl Backend {
    pub fn prose() -> Self {
        Backend::Fixed {
            label: "prose".into(),
            text: PROSE_RESPONSE.into(),
        }
    }

    pub fn name(&self) -> &str {
        match self {
            Backend::Echo => "echo",
            Backend::Oracle => "scripted",
            Backend::Fixed { label, .. } => label,
            Backend::Http(_) => "http",
        }
    }
}

/// Immutable retrieval state shared by every episode.
pub struct Pipeline {
    dataset: Arc<Dataset>,
    keyframes: Vec<KeyActionSequence>,
    predictor: Option<Arc<DynamicsPredictor>>,
    pool: FeatureTable,
    image_size: u32,
}

impl Pipeline {
    /// Extract keyframes and embed the pool with `mode`.
    pub fn new(
        dataset: Arc<Dataset>,
        predictor: Option<Arc<DynamicsPredictor>>,
        mode: FeatureMode,
    ) -> Result<Self, PipelineError> {
        let pool = embed_dataset(dataset.demos(), predictor.as_deref(), mode)?;
        Self::with_pool(dataset, predictor, pool)
    }

    /// Use externally computed pool features (one per demonstration, dataset order).
    pub fn with_pool(
        dataset: Arc<Dataset>,
        predictor: Option<Arc<DynamicsPredictor>>,
        pool: FeatureTable,
    ) -> Result<Self, PipelineError> {
        if pool.len() != dataset.len() {
            return Err(PipelineError::PoolMismatch(format!(
                "{} features for {} demonstrations",
                pool.len(),
                dataset.len()
            )));
        }
        if let Some((f, d)) = pool.features.iter().zip(dataset.demos()).find(|(f, d)| f.demo_id != d.id) {
            return Err(PipelineError::PoolMismatch(format!("feature `{}` where `{}` expected", f.demo_id, d.id)));
        }
        let epsilon = dataset.manifest().velocity_epsilon;
        let keyframes = dataset.demos().iter().map(|d| extract_keyframes(d, epsilon)).collect();
        let image_size = dataset
            .demos()
            .first()
            .map_or(DEFAULT_IMAGE_SIZE, |d| d.initial_observation().rgb.width);
        Ok(Pipeline {
            dataset,
            keyframes,
            predictor,
            pool,
            image_size,
        })
    }

    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    pub fn mode(&self) -> FeatureMode {
        self.pool.mode
    }

    pub fn pool(&self) -> &FeatureTable {
        &self.pool
    }

    pub fn keyframes(&self) -> &[KeyActionSequence] {
        &self.keyframes
    }

    pub fn image_size(&self) -> u32 {
        self.image_size
    }

    pub fn select(
        &self,
        initial: &Observation,
        language: &str,
        k: usize,
        selection: SelectionMode,
        seed: u64,
    ) -> Result<SelectionResult, PipelineError> {
        Ok(match selection {
            SelectionMode::Dynamics => {
                let query = dynamics_feature(
                    FeatureInput {
                        id: "query",
                        initial,
                        language,
                    },
                    self.predictor.as_deref(),
                    self.pool.mode,
                )?;
                select_top_k(&query, &self.pool.features, k)?
            }
            SelectionMode::Random => select_random(self.pool.len(), k, seed)?,
        })
    }

    /// Build the in-context prompt for a query scene.
    pub fn prompt_for(
        &self,
        initial: &Observation,
        language: &str,
        objects: &[ObjectRecord],
        k: usize,
        selection: SelectionMode,
        seed: u64,
    ) -> Result<PromptBundle, PipelineError> {
        let sel = self.select(initial, language, k, selection, seed)?;
        let demos = self.dataset.demos();
        let chosen: Vec<SelectedDemo> = sel
            .indices
            .iter()
            .zip(&sel.scores)
            .map(|(&i, &s)| SelectedDemo {
                demo: &demos[i],
                keyframes: &self.keyframes[i],
                similarity: s,
            })
            .collect();
        Ok(build_prompt(&chosen, language, objects, self.dataset.workspace())?)
    }

    /// Render the task's initial scene as a query observation.
    pub fn query_observation(&self, scene: &SceneState) -> Observation {
        Observation {
            rgb: render(scene, self.dataset.workspace(), self.image_size),
            joint_velocities: vec![0.0; 7],
            gripper_open: scene.gripper.gripper_open,
            timestep: 0,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct EpisodeSettings {
    pub k: usize,
    pub selection: SelectionMode,
}

impl Default for EpisodeSettings {
    fn default() -> Self {
        EpisodeSettings {
            k: DEFAULT_K,
            selection: SelectionMode::Dynamics,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeOutcome {
    pub result: RolloutResult,
    pub prompt_digest: String,
    /// Demonstration shown first in the prompt.
    pub top_demo: String,
    pub parse_warnings: Vec<String>,
}

/// The task's oracle key-actions for `scene`, one textualized action per line.
pub fn oracle_text(task: &TaskSpec, scene: &SceneState, ws: &WorkspaceBounds) -> String {
    task.oracle_keyactions(scene)
        .iter()
        .map(|p| textualize_action(&quantize_pose(p, ws)))
        .collect::<Vec<_>>()
        .join("\n")
}

impl Backend {
    /// `oracle` is the replay text for `Backend::Oracle`; other backends ignore it.
    pub fn complete(&self, prompt: &PromptBundle, oracle: Option<&str>) -> Result<CompletionRecord, GatewayError> {
        match self {
            Backend::Echo => EchoNearestBackend.complete(prompt),
            Backend::Oracle => {
                let text = oracle.ok_or_else(|| GatewayError::Config("the scripted backend needs a known task".into()))?;
                ScriptedBackend::new(text).complete(prompt)
            }
            Backend::Fixed { text, .. } => ScriptedBackend::new(text.clone()).complete(prompt),
            Backend::Http(http) => http.complete(prompt),
        }
    }
}

/// Prompt, complete and parse for one query; the actions are not executed.
pub fn predict_unseen_actions(
    pipeline: &Pipeline,
    task: &TaskSpec,
    scene: &SceneState,
    episode_seed: u64,
    settings: EpisodeSettings,
    backend: &Backend,
) -> Result<(PromptBundle, CompletionRecord, Result<ActionPrediction, PromptError>), PipelineError> {
    let initial = pipeline.query_observation(scene);
    let objects = scene.object_records();
    let selection_seed = derive_seed(episode_seed, "random-selection", 0);
    let prompt = pipeline.prompt_for(&initial, task.language, &objects, settings.k, settings.selection, selection_seed)?;
    let oracle = matches!(backend, Backend::Oracle).then(|| oracle_text(task, scene, pipeline.dataset.workspace()));
    let record = backend.complete(&prompt, oracle.as_deref()).map_err(|source| PipelineError::Gateway {
        task: task.name.to_string(),
        seed: episode_seed,
        source,
    })?;
    let parsed = ActionParser::new(pipeline.dataset.workspace().grid_resolution).parse(&record.response_text);
    Ok((prompt, record, parsed))
}

/// One seeded rollout of `task` through the full pipeline.
pub fn run_episode(
    pipeline: &Pipeline,
    task: &TaskSpec,
    episode_seed: u64,
    settings: EpisodeSettings,
    backend: &Backend,
) -> Result<EpisodeOutcome, PipelineError> {
    let mut scene = task.sample_scene(episode_seed, pipeline.dataset.manifest().sim);
    let (prompt, record, parsed) = predict_unseen_actions(pipeline, task, &scene, episode_seed, settings, backend)?;
    let top_demo = prompt.demo_blocks.first().map(|b| b.demo_id.clone()).unwrap_or_default();
    let (result, parse_warnings) = match parsed {
        Ok(pred) => (
            execute_actions(task, &mut scene, episode_seed, &pred.actions, pipeline.dataset.workspace()),
            pred.parse_warnings,
        ),
        Err(_) => (RolloutResult::failed(task.name, episode_seed, FailureReason::ParseFailure), vec![]),
    };
    Ok(EpisodeOutcome {
        result,
        prompt_digest: record.prompt_digest,
        top_demo,
        parse_warnings,
    })
}
