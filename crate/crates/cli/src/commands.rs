use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde_json::json;
use xicm_core::bench::{
    ablate_selection, aggregate, run_benchmark, sweep_k, BenchConfig, BenchError, BenchReport,
};
use xicm_core::demo_store::{load_dataset, save_dataset, Dataset, DatasetError, ObjectRecord, Observation, RgbImage};
use xicm_core::dynamics::{
    export_features, import_features, observed_features, samples_from_observed, train, DynamicsError,
    DynamicsPredictor, FeatureMode, TrainConfig, TrainingSample,
};
use xicm_core::gateway::{GatewayConfig, GatewayError, HttpBackend, Secret};
use xicm_core::keyframe::{self, KeyframeLine};
use xicm_core::pipeline::{oracle_text, run_episode, Backend, EpisodeSettings, Pipeline, PipelineError, SelectionMode};
use xicm_core::prompt::{ActionParser, PromptError};
use xicm_core::sim::{
    find_task, generate_seen_dataset, resolve_tasks, task_library, SceneState, SimConfig, SimError, TaskSpec,
    BACKGROUND,
};

use crate::config::{ConfigError, Settings};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Domain { kind: &'static str, message: String },
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    fn domain(kind: &'static str, e: impl std::fmt::Display) -> Self {
        CliError::Domain {
            kind,
            message: e.to_string(),
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Domain { .. } => 1,
        }
    }

    /// One JSON object on stderr.
    pub fn report(&self) {
        let (kind, message) = match self {
            CliError::Usage(m) => ("usage", m.as_str()),
            CliError::Domain { kind, message } => (*kind, message.as_str()),
        };
        eprintln!("{}", json!({"level": "error", "kind": kind, "message": message}));
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Usage(e.0)
    }
}

macro_rules! domain_error {
    ($($ty:ty => $kind:literal),* $(,)?) => {
        $(impl From<$ty> for CliError {
            fn from(e: $ty) -> Self {
                CliError::domain($kind, e)
            }
        })*
    };
}

domain_error!(
    DatasetError => "dataset",
    DynamicsError => "dynamics",
    SimError => "sim",
    PromptError => "prompt",
    GatewayError => "gateway",
    std::io::Error => "io",
    serde_json::Error => "json",
);

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Gateway { .. } => CliError::domain("gateway", e),
            other => CliError::domain("pipeline", other),
        }
    }
}

impl From<BenchError> for CliError {
    fn from(e: BenchError) -> Self {
        match e {
            BenchError::Config(m) => CliError::Usage(m),
            BenchError::Pipeline(p) => p.into(),
            io @ BenchError::Io { .. } => CliError::domain("io", io),
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn io_at(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::domain("io", format!("{}: {e}", path.display()))
}

fn print_json(v: &impl serde::Serialize) -> Result<()> {
    println!("{}", serde_json::to_string(v)?);
    Ok(())
}

pub fn simgen(s: &Settings, tasks: &str, episodes: usize) -> Result<()> {
    let specs = resolve_tasks(tasks).map_err(CliError::usage)?;
    let cfg = SimConfig {
        image_size: s.get("sim.image_size")?,
        ..SimConfig::default()
    };
    let ds = generate_seen_dataset(&specs, episodes, s.get("seed")?, &cfg)?;
    let out = s.raw("dataset");
    save_dataset(&ds, out)?;
    log::info!("wrote {} demonstrations to {out}", ds.len());
    print_json(&json!({"demonstrations": ds.len(), "out": out, "digest": ds.digest()}))
}

fn dataset(s: &Settings) -> Result<Dataset> {
    Ok(load_dataset(s.raw("dataset"))?)
}

pub fn ingest(s: &Settings) -> Result<()> {
    let ds = dataset(s)?;
    print_json(&json!({
        "demonstrations": ds.len(),
        "tasks": ds.manifest().tasks,
        "digest": ds.digest(),
    }))
}

pub fn extract_keyframes(s: &Settings, out: &str) -> Result<()> {
    let ds = dataset(s)?;
    let eps: f64 = s.get("epsilon")?;
    let mut sink: Box<dyn Write> = if out == "-" {
        Box::new(std::io::stdout().lock())
    } else {
        Box::new(BufWriter::new(File::create(out).map_err(io_at(Path::new(out)))?))
    };
    let written = ds.demos().iter().try_for_each(|demo| {
        let line = KeyframeLine::from(&keyframe::extract_keyframes(demo, eps));
        writeln!(sink, "{}", serde_json::to_string(&line)?)
    });
    match written.and_then(|()| sink.flush()) {
        // a closed downstream pipe (e.g. `| head`) is not an error
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => return Ok(()),
        other => other?,
    }
    log::info!("extracted keyframes for {} demonstrations", ds.len());
    Ok(())
}

pub fn embed(s: &Settings, out: &Path) -> Result<()> {
    let ds = dataset(s)?;
    let table = observed_features(ds.demos())?;
    export_features(&table, out)?;
    log::info!("wrote {} observed features to {}", table.len(), out.display());
    Ok(())
}

fn train_config(s: &Settings) -> Result<TrainConfig> {
    Ok(TrainConfig {
        hidden: s.get("train.hidden")?,
        learning_rate: s.get("train.learning_rate")?,
        epochs: s.get("train.epochs")?,
        batch_size: s.get("train.batch_size")?,
        seed: s.get("seed")?,
    })
}

fn mode(s: &Settings) -> Result<FeatureMode> {
    Ok(s.get("feature_mode")?)
}

pub fn train_dynamics(s: &Settings, features: Option<&Path>, out: &Path, pool_out: Option<&Path>) -> Result<()> {
    let ds = dataset(s)?;
    let samples: Vec<TrainingSample> = match features {
        Some(path) => samples_from_observed(&import_features(path)?)?,
        None => samples_from_observed(&observed_features(ds.demos())?)?,
    };
    let predictor = train(&samples, train_config(s)?)?;
    std::fs::write(out, serde_json::to_string(&predictor)?).map_err(io_at(out))?;
    log::info!(
        "trained on {} samples: loss {:.6} (constant-mean baseline {:.6})",
        samples.len(),
        predictor.final_loss,
        predictor.baseline_loss
    );
    if let Some(pool_path) = pool_out {
        let pipeline = Pipeline::new(Arc::new(ds), Some(Arc::new(predictor.clone())), mode(s)?)?;
        export_features(pipeline.pool(), pool_path)?;
    }
    print_json(&json!({
        "samples": samples.len(),
        "final_loss": predictor.final_loss,
        "baseline_loss": predictor.baseline_loss,
        "out": out,
    }))
}

fn load_predictor(path: &Path) -> Result<DynamicsPredictor> {
    let text = std::fs::read_to_string(path).map_err(io_at(path))?;
    serde_json::from_str(&text).map_err(|e| CliError::domain("dynamics", format!("{}: {e}", path.display())))
}

fn pipeline(s: &Settings) -> Result<Pipeline> {
    let ds = Arc::new(dataset(s)?);
    let mode = mode(s)?;
    let predictor = match s.optional("predictor") {
        Some(p) => Some(load_predictor(Path::new(p))?),
        None if mode.uses_vis_out() => {
            log::info!("no predictor given; training one on {} demonstrations", ds.len());
            let samples = samples_from_observed(&observed_features(ds.demos())?)?;
            Some(train(&samples, train_config(s)?)?)
        }
        None => None,
    }
    .map(Arc::new);
    Ok(match s.optional("features") {
        Some(path) => {
            let pool = import_features(path)?;
            if pool.mode != mode {
                return Err(CliError::usage(format!(
                    "pool features were embedded with {} but feature_mode is {mode}",
                    pool.mode
                )));
            }
            Pipeline::with_pool(ds, predictor, pool)?
        }
        None => Pipeline::new(ds, predictor, mode)?,
    })
}

pub enum QuerySpec {
    Task(String),
    Text(String),
}

struct Query {
    language: String,
    initial: Observation,
    objects: Vec<ObjectRecord>,
    scene: Option<(TaskSpec, SceneState)>,
}

fn query(s: &Settings, p: &Pipeline, spec: &QuerySpec) -> Result<Query> {
    let task = match spec {
        QuerySpec::Task(name) => Some(find_task(name).ok_or_else(|| CliError::usage(format!("unknown task `{name}`")))?),
        QuerySpec::Text(text) => {
            let norm = text.trim().to_lowercase();
            task_library().into_iter().find(|t| t.language.to_lowercase() == norm)
        }
    };
    Ok(match task {
        Some(task) => {
            let scene = task.sample_scene(s.get("seed")?, p.dataset().manifest().sim);
            Query {
                language: task.language.to_string(),
                initial: p.query_observation(&scene),
                objects: scene.object_records(),
                scene: Some((task, scene)),
            }
        }
        None => {
            let QuerySpec::Text(text) = spec else { unreachable!() };
            log::info!("query matches no toy task; using a blank scene with no objects");
            let size = p.image_size();
            Query {
                language: text.clone(),
                initial: Observation {
                    rgb: RgbImage::filled(size, size, BACKGROUND),
                    joint_velocities: vec![0.0; 7],
                    gripper_open: true,
                    timestep: 0,
                },
                objects: Vec::new(),
                scene: None,
            }
        }
    })
}

fn selection(s: &Settings) -> Result<SelectionMode> {
    Ok(s.get("selection")?)
}

fn selection_seed(s: &Settings) -> Result<u64> {
    Ok(s.get("seed")?)
}

pub fn select(s: &Settings, spec: &QuerySpec) -> Result<()> {
    let p = pipeline(s)?;
    let q = query(s, &p, spec)?;
    let result = p.select(&q.initial, &q.language, s.get("k")?, selection(s)?, selection_seed(s)?)?;
    for (rank, (i, score)) in result.indices.iter().zip(&result.scores).enumerate() {
        print_json(&json!({"rank": rank + 1, "demo_id": p.dataset().demos()[*i].id, "score": score}))?;
    }
    Ok(())
}

pub fn prompt(s: &Settings, spec: &QuerySpec, dry_run: bool) -> Result<()> {
    let p = pipeline(s)?;
    let q = query(s, &p, spec)?;
    let bundle = p.prompt_for(&q.initial, &q.language, &q.objects, s.get("k")?, selection(s)?, selection_seed(s)?)?;
    if dry_run {
        print!("{}", bundle.rendered);
        Ok(())
    } else {
        print_json(&bundle)
    }
}

fn gateway_config(s: &Settings) -> Result<GatewayConfig> {
    let secs = |key: &str| -> Result<Duration> {
        let v: f64 = s.get(key)?;
        Duration::try_from_secs_f64(v).map_err(|e| CliError::usage(format!("`{key}`: {e}")))
    };
    Ok(GatewayConfig {
        endpoint_url: s.raw("gateway.endpoint").to_string(),
        model_name: s.raw("gateway.model").to_string(),
        api_key: Secret::new(s.raw("gateway.api_key")),
        temperature: s.get("gateway.temperature")?,
        max_output_tokens: s.get("gateway.max_tokens")?,
        request_timeout: secs("gateway.timeout")?,
        max_retries: s.get("gateway.max_retries")?,
        max_concurrent_requests: s.get("gateway.concurrency")?,
        backoff_base: secs("gateway.backoff")?,
        cache_dir: s.optional("gateway.cache_dir").map(PathBuf::from),
    })
}

fn backend(s: &Settings) -> Result<Backend> {
    Ok(match s.raw("backend") {
        "echo" => Backend::Echo,
        "scripted" | "oracle" => Backend::Oracle,
        "prose" => Backend::prose(),
        "http" => {
            let cfg = gateway_config(s)?;
            cfg.validate().map_err(|e| CliError::usage(e.to_string()))?;
            Backend::Http(Arc::new(HttpBackend::new(cfg)?))
        }
        other => return Err(CliError::usage(format!("unknown backend `{other}` (echo|scripted|prose|http)"))),
    })
}

pub fn predict(s: &Settings, spec: &QuerySpec) -> Result<()> {
    let backend = backend(s)?;
    let p = pipeline(s)?;
    let q = query(s, &p, spec)?;
    let bundle = p.prompt_for(&q.initial, &q.language, &q.objects, s.get("k")?, selection(s)?, selection_seed(s)?)?;
    let oracle = q
        .scene
        .as_ref()
        .map(|(task, scene)| oracle_text(task, scene, p.dataset().workspace()));
    let record = backend.complete(&bundle, oracle.as_deref())?;
    let parsed = ActionParser::new(p.dataset().workspace().grid_resolution).parse(&record.response_text)?;
    print_json(&json!({
        "query": q.language,
        "prompt_digest": record.prompt_digest,
        "backend": backend.name(),
        "attempt_count": record.attempt_count,
        "actions": parsed.actions.iter().map(|a| a.to_array()).collect::<Vec<_>>(),
        "parse_warnings": parsed.parse_warnings,
        "raw_text": record.response_text,
    }))
}

pub fn rollout(s: &Settings, task: &str) -> Result<()> {
    let backend = backend(s)?;
    let task = find_task(task).ok_or_else(|| CliError::usage(format!("unknown task `{task}`")))?;
    let p = pipeline(s)?;
    let settings = EpisodeSettings {
        k: s.get("k")?,
        selection: selection(s)?,
    };
    let out = run_episode(&p, &task, s.get("seed")?, settings, &backend)?;
    print_json(&out)
}

fn bench_config(s: &Settings, p: &Pipeline) -> Result<BenchConfig> {
    let runs: usize = s.get("bench.runs")?;
    let tasks = resolve_tasks(s.raw("bench.tasks")).map_err(CliError::usage)?;
    let cfg = BenchConfig {
        tasks: tasks.iter().map(|t| t.name.to_string()).collect(),
        runs,
        rollouts_per_run: s.get("bench.rollouts")?,
        k: s.get("k")?,
        feature_mode: p.mode(),
        selection: selection(s)?,
        ..BenchConfig::default()
    };
    Ok(match s.optional("bench.seeds") {
        Some(list) => BenchConfig {
            seeds: list
                .split(',')
                .map(|v| v.trim().parse::<u64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| CliError::usage(format!("bench.seeds: {e}")))?,
            ..cfg
        },
        None => cfg.with_base_seed(s.get("seed")?),
    })
}

fn out_dir(s: &Settings) -> PathBuf {
    PathBuf::from(s.raw("bench.out"))
}

pub fn bench(s: &Settings) -> Result<()> {
    let backend = backend(s)?;
    let p = pipeline(s)?;
    let cfg = bench_config(s, &p)?;
    cfg.validate()?;
    let report = run_benchmark(&p, &cfg, &backend)?;
    let dir = out_dir(s);
    report.write_to(&dir)?;
    log::info!("wrote report.json, report.csv and report.md to {}", dir.display());
    print!("{}", report.to_markdown());
    Ok(())
}

pub fn ablate(s: &Settings) -> Result<()> {
    let backend = backend(s)?;
    let p = pipeline(s)?;
    let cfg = bench_config(s, &p)?;
    cfg.validate()?;
    let report = ablate_selection(&p, &cfg, &backend)?;
    let dir = out_dir(s);
    std::fs::create_dir_all(&dir).map_err(io_at(&dir))?;
    let json_path = dir.join("ablation.json");
    std::fs::write(&json_path, report.to_json()).map_err(io_at(&json_path))?;
    let md_path = dir.join("ablation.md");
    std::fs::write(&md_path, report.to_markdown()).map_err(io_at(&md_path))?;
    print!("{}", report.to_markdown());
    Ok(())
}

pub fn sweep(s: &Settings, k_values: &str) -> Result<()> {
    let ks: Vec<usize> = k_values
        .split(',')
        .map(|v| v.trim().parse())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| CliError::usage(format!("--k-values: {e}")))?;
    let backend = backend(s)?;
    let p = pipeline(s)?;
    let cfg = bench_config(s, &p)?;
    let report = sweep_k(&p, &cfg, &ks, &backend)?;
    let dir = out_dir(s);
    std::fs::create_dir_all(&dir).map_err(io_at(&dir))?;
    let csv_path = dir.join("sweep.csv");
    std::fs::write(&csv_path, report.to_csv()).map_err(io_at(&csv_path))?;
    let json_path = dir.join("sweep.json");
    std::fs::write(&json_path, serde_json::to_string_pretty(&report)? + "\n").map_err(io_at(&json_path))?;
    print!("{}", report.to_csv());
    Ok(())
}

pub fn report(s: &Settings, input: Option<&Path>, format: &str) -> Result<()> {
    let path = input.map_or_else(|| out_dir(s).join("report.json"), Path::to_path_buf);
    let text = std::fs::read_to_string(&path).map_err(io_at(&path))?;
    let saved: BenchReport =
        serde_json::from_str(&text).map_err(|e| CliError::domain("report", format!("{}: {e}", path.display())))?;
    let recomputed = aggregate(saved.config.clone(), saved.episodes.clone())?;
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-12;
    for (a, b) in saved.tasks.iter().zip(&recomputed.tasks) {
        if !close(a.mean, b.mean) || !close(a.std, b.std) {
            return Err(CliError::domain(
                "report",
                format!("statistics for `{}` disagree with the episode log", a.task),
            ));
        }
    }
    match format {
        "md" => print!("{}", recomputed.to_markdown()),
        "csv" => print!("{}", recomputed.to_csv()),
        "json" => print!("{}", recomputed.to_json()),
        other => return Err(CliError::usage(format!("unknown format `{other}` (md|csv|json)"))),
    }
    Ok(())
}
