//! Layered settings: default < file < env < flag, with per-key provenance.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    Default,
    File,
    Env,
    Flag,
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Source::Default => "default",
            Source::File => "file",
            Source::Env => "env",
            Source::Flag => "flag",
        })
    }
}

/// Every recognised key with its default. An empty default means unset.
pub const DEFAULTS: &[(&str, &str)] = &[
    ("dataset", "data"),
    ("seed", "7"),
    ("k", "18"),
    ("feature_mode", "vis_out+lang"),
    ("selection", "dynamics"),
    ("backend", "echo"),
    ("epsilon", "0.01"),
    ("features", ""),
    ("predictor", ""),
    ("sim.image_size", "32"),
    ("train.epochs", "300"),
    ("train.learning_rate", "20"),
    ("train.hidden", "64"),
    ("train.batch_size", "16"),
    ("gateway.endpoint", "http://localhost:8000/v1"),
    ("gateway.model", "Qwen2.5-72B-Instruct"),
    ("gateway.api_key", ""),
    ("gateway.temperature", "0"),
    ("gateway.max_tokens", "512"),
    ("gateway.timeout", "60"),
    ("gateway.max_retries", "3"),
    ("gateway.concurrency", "4"),
    ("gateway.backoff", "1"),
    ("gateway.cache_dir", ""),
    ("bench.tasks", "unseen"),
    ("bench.runs", "3"),
    ("bench.rollouts", "25"),
    ("bench.seeds", ""),
    ("bench.out", "reports"),
];

const SECRET_KEYS: &[&str] = &["gateway.api_key"];

pub fn env_var(key: &str) -> String {
    match key {
        "gateway.endpoint" => "XICM_LLM_ENDPOINT".into(),
        "gateway.model" => "XICM_LLM_MODEL".into(),
        "gateway.api_key" => "XICM_LLM_API_KEY".into(),
        _ => format!("XICM_{}", key.replace('.', "_").to_uppercase()),
    }
}

#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone)]
pub struct Settings {
    values: BTreeMap<&'static str, (String, Source)>,
}

fn known(key: &str) -> Option<&'static str> {
    DEFAULTS.iter().map(|(k, _)| *k).find(|k| *k == key)
}

impl Settings {
    pub fn defaults() -> Self {
        Settings {
            values: DEFAULTS
                .iter()
                .map(|(k, v)| (*k, (v.to_string(), Source::Default)))
                .collect(),
        }
    }

    fn set(&mut self, key: &str, value: String, source: Source) -> Result<(), ConfigError> {
        let key = known(key).ok_or_else(|| ConfigError(format!("unknown config key `{key}`")))?;
        self.values.insert(key, (value, source));
        Ok(())
    }

    /// Flat `key=value` lines; `#` starts a comment.
    pub fn apply_file(&mut self, path: &Path) -> Result<(), ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read config {}: {e}", path.display())))?;
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| ConfigError(format!("{}:{}: expected key=value", path.display(), n + 1)))?;
            self.set(k.trim(), v.trim().to_string(), Source::File)
                .map_err(|e| ConfigError(format!("{}:{}: {e}", path.display(), n + 1)))?;
        }
        Ok(())
    }

    pub fn apply_env(&mut self, lookup: impl Fn(&str) -> Option<String>) {
        for (key, _) in DEFAULTS {
            if let Some(v) = lookup(&env_var(key)) {
                self.values.insert(key, (v, Source::Env));
            }
        }
    }

    pub fn apply_flags(&mut self, flags: &[(&str, String)]) -> Result<(), ConfigError> {
        for (k, v) in flags {
            self.set(k, v.clone(), Source::Flag)?;
        }
        Ok(())
    }

    pub fn raw(&self, key: &str) -> &str {
        &self.values.get(key).unwrap_or_else(|| panic!("unregistered key {key}")).0
    }

    pub fn source(&self, key: &str) -> Source {
        self.values[key].1
    }

    /// Empty string means unset.
    pub fn optional(&self, key: &str) -> Option<&str> {
        Some(self.raw(key)).filter(|v| !v.is_empty())
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T, ConfigError>
    where
        T::Err: fmt::Display,
    {
        let raw = self.raw(key);
        raw.parse()
            .map_err(|e| ConfigError(format!("invalid value `{raw}` for `{key}` ({}): {e}", self.source(key))))
    }

    /// `key = value (source)` per line; secrets are redacted.
    pub fn provenance(&self) -> String {
        let mut out = String::new();
        for (key, (value, source)) in &self.values {
            let shown = if SECRET_KEYS.contains(key) && !value.is_empty() {
                "<redacted>"
            } else {
                value
            };
            out.push_str(&format!("{key} = {shown} ({source})\n"));
        }
        out
    }
}
