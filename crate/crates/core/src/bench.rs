//! Seeded evaluation protocol: runs × rollouts per task, statistics, and the
//! selection and K ablations.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::FeatureMode;
use crate::pipeline::{run_episode, Backend, EpisodeSettings, Pipeline, PipelineError, SelectionMode, DEFAULT_K};
use crate::seeds::derive_seed;
use crate::sim::{find_task, RolloutResult, TaskLevel, TaskSpec};

pub const STD_CONVENTION: &str =
    "sample standard deviation (n-1) over run-level success rates; 0 when there is a single run";

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid bench config: {0}")]
    Config(String),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub tasks: Vec<String>,
    pub runs: usize,
    pub rollouts_per_run: usize,
    pub seeds: Vec<u64>,
    pub k: usize,
    pub feature_mode: FeatureMode,
    pub selection: SelectionMode,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            tasks: Vec::new(),
            runs: 3,
            rollouts_per_run: 25,
            seeds: vec![0, 1, 2],
            k: DEFAULT_K,
            feature_mode: FeatureMode::default(),
            selection: SelectionMode::Dynamics,
        }
    }
}

impl BenchConfig {
    /// `runs` consecutive seeds starting at `base`.
    pub fn with_base_seed(mut self, base: u64) -> Self {
        self.seeds = (0..self.runs as u64).map(|r| base.wrapping_add(r)).collect();
        self
    }

    fn resolve(&self) -> Result<Vec<TaskSpec>, BenchError> {
        if self.tasks.is_empty() {
            return Err(BenchError::Config("no tasks".into()));
        }
        let mut names = self.tasks.clone();
        names.sort();
        if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
            return Err(BenchError::Config(format!("task `{}` listed twice", w[0])));
        }
        self.tasks
            .iter()
            .map(|n| find_task(n).ok_or_else(|| BenchError::Config(format!("unknown task `{n}`"))))
            .collect()
    }

    pub fn validate(&self) -> Result<Vec<TaskSpec>, BenchError> {
        if self.runs == 0 {
            return Err(BenchError::Config("runs must be at least 1".into()));
        }
        if self.rollouts_per_run == 0 {
            return Err(BenchError::Config("rollouts_per_run must be at least 1".into()));
        }
        if self.seeds.len() != self.runs {
            return Err(BenchError::Config(format!(
                "{} seeds given for {} runs",
                self.seeds.len(),
                self.runs
            )));
        }
        let mut seeds = self.seeds.clone();
        seeds.sort_unstable();
        if seeds.windows(2).any(|w| w[0] == w[1]) {
            return Err(BenchError::Config("seeds must be distinct".into()));
        }
        if self.k == 0 {
            return Err(BenchError::Config("K must be at least 1".into()));
        }
        self.resolve()
    }

    fn check_pipeline(&self, pipeline: &Pipeline) -> Result<(), BenchError> {
        let n = pipeline.pool().len();
        if self.k > n {
            return Err(BenchError::Config(format!("K = {} exceeds the pool size {n}", self.k)));
        }
        if self.feature_mode != pipeline.mode() {
            return Err(BenchError::Config(format!(
                "feature mode {} requested but the pool was embedded with {}",
                self.feature_mode,
                pipeline.mode()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigSnapshot {
    #[serde(flatten)]
    pub config: BenchConfig,
    pub backend: String,
    pub pool_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub run: usize,
    pub episode: usize,
    #[serde(flatten)]
    pub result: RolloutResult,
    pub top_demo: String,
    pub prompt_digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskStats {
    pub task: String,
    pub level: TaskLevel,
    pub run_rates: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    /// A task level name, or `all`.
    pub group: String,
    pub task_count: usize,
    /// Unweighted mean over member tasks, per run.
    pub run_rates: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub std_convention: String,
    pub config: ConfigSnapshot,
    pub tasks: Vec<TaskStats>,
    pub levels: Vec<GroupStats>,
    pub overall: GroupStats,
    pub episodes: Vec<EpisodeLog>,
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation; 0 for fewer than two values.
pub fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let ss: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    (ss / (xs.len() - 1) as f64).sqrt()
}

fn group(name: &str, members: &[&TaskStats], runs: usize) -> GroupStats {
    let run_rates: Vec<f64> = (0..runs)
        .map(|r| members.iter().map(|t| t.run_rates[r]).sum::<f64>() / members.len() as f64)
        .collect();
    GroupStats {
        group: name.to_string(),
        task_count: members.len(),
        mean: mean(&run_rates),
        std: sample_std(&run_rates),
        run_rates,
    }
}

/// Build a report from a complete episode log.
pub fn aggregate(snapshot: ConfigSnapshot, episodes: Vec<EpisodeLog>) -> Result<BenchReport, BenchError> {
    let specs = snapshot.config.validate()?;
    let cfg = &snapshot.config;
    let mut tasks = Vec::with_capacity(specs.len());
    for spec in &specs {
        let mut successes = vec![0usize; cfg.runs];
        let mut counts = vec![0usize; cfg.runs];
        for e in episodes.iter().filter(|e| e.result.task == spec.name) {
            if e.run >= cfg.runs {
                return Err(BenchError::Config(format!("episode log has run {} of {}", e.run, cfg.runs)));
            }
            counts[e.run] += 1;
            successes[e.run] += usize::from(e.result.success);
        }
        if let Some(r) = counts.iter().position(|&c| c != cfg.rollouts_per_run) {
            return Err(BenchError::Config(format!(
                "task `{}` run {r} has {} episodes, expected {}",
                spec.name, counts[r], cfg.rollouts_per_run
            )));
        }
        let run_rates: Vec<f64> = successes
            .iter()
            .map(|&s| s as f64 / cfg.rollouts_per_run as f64)
            .collect();
        tasks.push(TaskStats {
            task: spec.name.to_string(),
            level: spec.level,
            mean: mean(&run_rates),
            std: sample_std(&run_rates),
            run_rates,
        });
    }
    let mut levels = Vec::new();
    for level in [TaskLevel::Seen, TaskLevel::UnseenLevel1, TaskLevel::UnseenLevel2] {
        let members: Vec<&TaskStats> = tasks.iter().filter(|t| t.level == level).collect();
        if !members.is_empty() {
            levels.push(group(level.name(), &members, cfg.runs));
        }
    }
    let all: Vec<&TaskStats> = tasks.iter().collect();
    let overall = group("all", &all, cfg.runs);
    Ok(BenchReport {
        std_convention: STD_CONVENTION.to_string(),
        config: snapshot,
        tasks,
        levels,
        overall,
        episodes,
    })
}

pub fn run_benchmark(pipeline: &Pipeline, cfg: &BenchConfig, backend: &Backend) -> Result<BenchReport, BenchError> {
    let specs = cfg.validate()?;
    cfg.check_pipeline(pipeline)?;
    let settings = EpisodeSettings {
        k: cfg.k,
        selection: cfg.selection,
    };
    let jobs: Vec<(&TaskSpec, usize, usize)> = specs
        .iter()
        .flat_map(|t| (0..cfg.runs).flat_map(move |r| (0..cfg.rollouts_per_run).map(move |e| (t, r, e))))
        .collect();
    let episodes = jobs
        .par_iter()
        .map(|&(task, run, episode)| {
            let seed = derive_seed(cfg.seeds[run], task.name, episode as u64);
            let out = run_episode(pipeline, task, seed, settings, backend)?;
            Ok(EpisodeLog {
                run,
                episode,
                result: out.result,
                top_demo: out.top_demo,
                prompt_digest: out.prompt_digest,
            })
        })
        .collect::<Result<Vec<_>, PipelineError>>()?;
    let snapshot = ConfigSnapshot {
        config: cfg.clone(),
        backend: backend.name().to_string(),
        pool_size: pipeline.pool().len(),
    };
    aggregate(snapshot, episodes)
}

fn pct(x: f64) -> String {
    format!("{:.1}", x * 100.0)
}

impl BenchReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn to_csv(&self) -> String {
        let runs = self.config.config.runs;
        let mut out = String::from("task,level");
        for r in 1..=runs {
            let _ = write!(out, ",run_{r}");
        }
        out.push_str(",mean,std\n");
        for t in &self.tasks {
            let _ = write!(out, "{},{}", t.task, t.level.name());
            for r in &t.run_rates {
                let _ = write!(out, ",{r}");
            }
            let _ = writeln!(out, ",{},{}", t.mean, t.std);
        }
        out
    }

    /// Percentages with one decimal; `mean (std)` per row.
    pub fn to_markdown(&self) -> String {
        let runs = self.config.config.runs;
        let mut out = String::new();
        let _ = writeln!(
            out,
            "Backend `{}`, selection `{}`, K = {}, feature mode `{}`.\n\nStd: {}.\n",
            self.config.backend,
            match self.config.config.selection {
                SelectionMode::Dynamics => "dynamics",
                SelectionMode::Random => "random",
            },
            self.config.config.k,
            self.config.config.feature_mode,
            self.std_convention
        );
        out.push_str("| Task | Level |");
        for r in 1..=runs {
            let _ = write!(out, " Run {r} |");
        }
        out.push_str(" Mean (std) |\n|---|---|");
        out.push_str(&"---|".repeat(runs + 1));
        out.push('\n');
        let mut row = |name: &str, level: &str, rates: &[f64], m: f64, s: f64| {
            let _ = write!(out, "| {name} | {level} |");
            for r in rates {
                let _ = write!(out, " {} |", pct(*r));
            }
            let _ = writeln!(out, " {} ({}) |", pct(m), pct(s));
        };
        for t in &self.tasks {
            row(&t.task, t.level.name(), &t.run_rates, t.mean, t.std);
        }
        for g in self.levels.iter().chain(std::iter::once(&self.overall)) {
            row(&format!("**avg {}**", g.group), "", &g.run_rates, g.mean, g.std);
        }
        out
    }

    /// Writes `report.json`, `report.csv` and `report.md` into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<(), BenchError> {
        write_file(dir, "report.json", &self.to_json())?;
        write_file(dir, "report.csv", &self.to_csv())?;
        write_file(dir, "report.md", &self.to_markdown())
    }
}

fn write_file(dir: &Path, name: &str, body: &str) -> Result<(), BenchError> {
    let io = |source| BenchError::Io {
        path: dir.join(name).display().to_string(),
        source,
    };
    std::fs::create_dir_all(dir).map_err(io)?;
    std::fs::write(dir.join(name), body).map_err(io)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskDelta {
    pub task: String,
    pub dynamics: f64,
    pub random: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub deltas: Vec<TaskDelta>,
    /// Overall dynamics mean minus overall random mean.
    pub aggregate_delta: f64,
    pub dynamics: BenchReport,
    pub random: BenchReport,
}

impl AblationReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::from("| Task | dynamics | random | delta |\n|---|---|---|---|\n");
        for d in &self.deltas {
            let _ = writeln!(out, "| {} | {} | {} | {} |", d.task, pct(d.dynamics), pct(d.random), pct(d.delta));
        }
        let _ = writeln!(
            out,
            "| **all** | {} | {} | {} |",
            pct(self.dynamics.overall.mean),
            pct(self.random.overall.mean),
            pct(self.aggregate_delta)
        );
        out
    }
}

/// Same episode seeds under dynamics-guided and random selection.
pub fn ablate_selection(
    pipeline: &Pipeline,
    cfg: &BenchConfig,
    backend: &Backend,
) -> Result<AblationReport, BenchError> {
    let arm = |selection| {
        let cfg = BenchConfig {
            selection,
            ..cfg.clone()
        };
        cfg.validate()?;
        cfg.check_pipeline(pipeline)?;
        Ok::<_, BenchError>(cfg)
    };
    let (dyn_cfg, rand_cfg) = (arm(SelectionMode::Dynamics)?, arm(SelectionMode::Random)?);
    let dynamics = run_benchmark(pipeline, &dyn_cfg, backend)?;
    let random = run_benchmark(pipeline, &rand_cfg, backend)?;
    let deltas = dynamics
        .tasks
        .iter()
        .zip(&random.tasks)
        .map(|(d, r)| TaskDelta {
            task: d.task.clone(),
            dynamics: d.mean,
            random: r.mean,
            delta: d.mean - r.mean,
        })
        .collect();
    Ok(AblationReport {
        deltas,
        aggregate_delta: dynamics.overall.mean - random.overall.mean,
        dynamics,
        random,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub k: usize,
    pub report: BenchReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub points: Vec<SweepPoint>,
}

impl SweepReport {
    /// One `k,mean,std` row per K.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("k,mean,std\n");
        for p in &self.points {
            let _ = writeln!(out, "{},{},{}", p.k, p.report.overall.mean, p.report.overall.std);
        }
        out
    }
}

pub fn sweep_k(
    pipeline: &Pipeline,
    cfg: &BenchConfig,
    k_values: &[usize],
    backend: &Backend,
) -> Result<SweepReport, BenchError> {
    if k_values.is_empty() {
        return Err(BenchError::Config("empty K list".into()));
    }
    let configs = k_values
        .iter()
        .map(|&k| {
            let cfg = BenchConfig { k, ..cfg.clone() };
            cfg.validate()?;
            cfg.check_pipeline(pipeline)?;
            Ok(cfg)
        })
        .collect::<Result<Vec<_>, BenchError>>()?;
    let points = configs
        .iter()
        .map(|c| {
            Ok(SweepPoint {
                k: c.k,
                report: run_benchmark(pipeline, c, backend)?,
            })
        })
        .collect::<Result<_, BenchError>>()?;
    Ok(SweepReport { points })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_statistics() {
        assert!((mean(&[0.2, 0.3, 0.4]) - 0.3).abs() < 1e-12);
        assert!((sample_std(&[0.2, 0.3, 0.4]) - 0.1).abs() < 1e-12);
        assert_eq!(sample_std(&[0.5]), 0.0);
    }

    #[test]
    fn validation_fails_fast() {
        let base = BenchConfig {
            tasks: vec!["push_button".into()],
            ..BenchConfig::default()
        };
        assert!(base.validate().is_ok());
        let dup = BenchConfig {
            seeds: vec![1, 1, 2],
            ..base.clone()
        };
        assert!(matches!(dup.validate(), Err(BenchError::Config(_))));
        let short = BenchConfig {
            seeds: vec![1],
            ..base.clone()
        };
        assert!(short.validate().is_err());
        let zero = BenchConfig {
            rollouts_per_run: 0,
            ..base.clone()
        };
        assert!(zero.validate().is_err());
        let unknown = BenchConfig {
            tasks: vec!["juggle".into()],
            ..base
        };
        assert!(unknown.validate().is_err());
    }
}
