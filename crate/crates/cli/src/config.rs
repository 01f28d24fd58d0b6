//! Run settings and the key-value config file.
//!
//! ```text
//! # applies to every subcommand
//! seed = 7
//! m = 4
//!
//! [train]
//! max_episodes = 500
//! ```
//!
//! Keys before the first `[section]` apply everywhere; keys inside a section
//! apply only to the subcommand of that name. Every key and value is checked
//! even when its section is not the one running.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use mrag_core::corpus::TaskKind;
use mrag_core::metrics::MetricKind;
use mrag_core::partition::Strategy;
use mrag_core::pipeline::RefineMode;

/// A bad key, value or file layout. Always a usage error.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

pub const SECTIONS: [&str; 7] = ["ingest", "partition", "planted", "train", "infer", "eval", "bench-partition"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackendKind {
    Mock,
    Http,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub task: TaskKind,
    pub seed: u64,
    /// `None` means the task default.
    pub strategies: Option<Vec<Strategy>>,
    pub m: Option<Vec<usize>>,
    pub k: usize,
    pub metric: MetricKind,
    pub eval_metrics: Vec<MetricKind>,
    pub backend: BackendKind,
    pub endpoint: String,
    pub model: String,
    pub timeout_secs: u64,
    pub retries: u32,
    pub cache_dir: Option<PathBuf>,
    pub max_tokens: u32,
    pub candidate_temperature: f64,
    pub embed_backend: BackendKind,
    pub embed_endpoint: String,
    pub embed_dimension: usize,
    pub embed_seed: u64,
    pub train_fraction: f64,
    pub dev_count: usize,
    pub max_episodes: usize,
    pub eval_every: usize,
    pub patience: usize,
    pub dev_slice: usize,
    pub i_max: usize,
    pub j_max: usize,
    pub refine: RefineMode,
    pub gamma: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub epsilon_decay_steps: u64,
    pub replay_capacity: usize,
    pub max_connections: usize,
    pub ef_construction: usize,
    pub ef_search: usize,
    pub log_level: String,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            task: TaskKind::Summarization,
            seed: 42,
            strategies: None,
            m: None,
            k: 3,
            metric: MetricKind::Rouge1,
            eval_metrics: MetricKind::ALL.to_vec(),
            backend: BackendKind::Mock,
            endpoint: "http://localhost:8000/v1".into(),
            model: "default".into(),
            timeout_secs: 60,
            retries: 2,
            cache_dir: None,
            max_tokens: 256,
            candidate_temperature: 0.8,
            embed_backend: BackendKind::Mock,
            embed_endpoint: "http://localhost:8000/v1/embeddings".into(),
            embed_dimension: 256,
            embed_seed: 0,
            train_fraction: 0.1,
            dev_count: 200,
            max_episodes: 2000,
            eval_every: 100,
            patience: 3,
            dev_slice: 50,
            i_max: 3,
            j_max: 4,
            refine: RefineMode::Learned,
            gamma: 0.95,
            learning_rate: 1e-3,
            batch_size: 32,
            epsilon_start: 1.0,
            epsilon_end: 0.1,
            epsilon_decay_steps: 2000,
            replay_capacity: 10_000,
            max_connections: 16,
            ef_construction: 100,
            ef_search: 64,
            log_level: "warn".into(),
        }
    }
}

pub const KEYS: &[&str] = &[
    "task", "seed", "strategy", "m", "k", "metric", "eval_metrics", "backend", "endpoint", "model",
    "timeout_secs", "retries", "cache_dir", "max_tokens", "candidate_temperature", "embed_backend",
    "embed_endpoint", "embed_dimension", "embed_seed", "train_fraction", "dev_count", "max_episodes",
    "eval_every", "patience", "dev_slice", "i_max", "j_max", "refine", "gamma", "learning_rate",
    "batch_size", "epsilon_start", "epsilon_end", "epsilon_decay_steps", "replay_capacity",
    "max_connections", "ef_construction", "ef_search", "log_level",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: fmt::Display,
{
    value.parse().map_err(|e| ConfigError(format!("invalid value `{value}` for `{key}`: {e}")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>, ConfigError>
where
    T::Err: fmt::Display,
{
    let items: Vec<T> = value.split(',').map(str::trim).filter(|s| !s.is_empty()).map(|s| parse(key, s)).collect::<Result<_, _>>()?;
    if items.is_empty() {
        return Err(ConfigError(format!("`{key}` needs at least one value")));
    }
    Ok(items)
}

fn parse_backend(key: &str, value: &str) -> Result<BackendKind, ConfigError> {
    match value.to_ascii_lowercase().as_str() {
        "mock" | "hash" => Ok(BackendKind::Mock),
        "http" => Ok(BackendKind::Http),
        _ => Err(ConfigError(format!("invalid value `{value}` for `{key}`: expected mock, hash or http"))),
    }
}

impl Settings {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let v = value.trim();
        match key {
            "task" => self.task = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "strategy" => self.strategies = Some(parse_list(key, v)?),
            "m" => {
                let m: Vec<usize> = parse_list(key, v)?;
                if m.contains(&0) {
                    return Err(ConfigError("`m` must be at least 1".into()));
                }
                self.m = Some(m);
            }
            "k" => self.k = parse(key, v)?,
            "metric" => self.metric = parse(key, v)?,
            "eval_metrics" => self.eval_metrics = parse_list(key, v)?,
            "backend" => self.backend = parse_backend(key, v)?,
            "endpoint" => self.endpoint = v.to_string(),
            "model" => self.model = v.to_string(),
            "timeout_secs" => self.timeout_secs = parse(key, v)?,
            "retries" => self.retries = parse(key, v)?,
            "cache_dir" => self.cache_dir = Some(PathBuf::from(v)),
            "max_tokens" => self.max_tokens = parse(key, v)?,
            "candidate_temperature" => self.candidate_temperature = parse(key, v)?,
            "embed_backend" => self.embed_backend = parse_backend(key, v)?,
            "embed_endpoint" => self.embed_endpoint = v.to_string(),
            "embed_dimension" => self.embed_dimension = parse(key, v)?,
            "embed_seed" => self.embed_seed = parse(key, v)?,
            "train_fraction" => self.train_fraction = parse(key, v)?,
            "dev_count" => self.dev_count = parse(key, v)?,
            "max_episodes" => self.max_episodes = parse(key, v)?,
            "eval_every" => self.eval_every = parse(key, v)?,
            "patience" => self.patience = parse(key, v)?,
            "dev_slice" => self.dev_slice = parse(key, v)?,
            "i_max" => self.i_max = parse(key, v)?,
            "j_max" => self.j_max = parse(key, v)?,
            "refine" => {
                self.refine = match v.to_ascii_lowercase().as_str() {
                    "learned" => RefineMode::Learned,
                    "greedy" => RefineMode::Greedy,
                    _ => return Err(ConfigError(format!("invalid value `{v}` for `refine`: expected learned or greedy"))),
                }
            }
            "gamma" => self.gamma = parse(key, v)?,
            "learning_rate" => self.learning_rate = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "epsilon_start" => self.epsilon_start = parse(key, v)?,
            "epsilon_end" => self.epsilon_end = parse(key, v)?,
            "epsilon_decay_steps" => self.epsilon_decay_steps = parse(key, v)?,
            "replay_capacity" => self.replay_capacity = parse(key, v)?,
            "max_connections" => self.max_connections = parse(key, v)?,
            "ef_construction" => self.ef_construction = parse(key, v)?,
            "ef_search" => self.ef_search = parse(key, v)?,
            "log_level" => {
                if !["off", "error", "warn", "info", "debug", "trace"].contains(&v.to_ascii_lowercase().as_str()) {
                    return Err(ConfigError(format!("invalid value `{v}` for `log_level`")));
                }
                self.log_level = v.to_ascii_lowercase();
            }
            _ => return Err(ConfigError(format!("unknown config key `{key}` (known keys: {})", KEYS.join(", ")))),
        }
        Ok(())
    }

    /// The single M for commands that build one database.
    pub fn single_m(&self) -> Result<Option<usize>, ConfigError> {
        match self.m.as_deref() {
            None => Ok(None),
            Some([m]) => Ok(Some(*m)),
            Some(_) => Err(ConfigError("`m` takes a single value here".into())),
        }
    }

    pub fn single_strategy(&self) -> Result<Option<Strategy>, ConfigError> {
        match self.strategies.as_deref() {
            None => Ok(None),
            Some([s]) => Ok(Some(*s)),
            Some(_) => Err(ConfigError("`strategy` takes a single value here".into())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entry {
    pub section: Option<String>,
    pub key: String,
    pub value: String,
    pub line: usize,
}

pub fn parse_config(text: &str) -> Result<Vec<Entry>, ConfigError> {
    let mut entries = Vec::new();
    let mut section = None;
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(name) = line.strip_prefix('[') {
            let name = name
                .strip_suffix(']')
                .map(str::trim)
                .ok_or_else(|| ConfigError(format!("line {line_no}: unterminated section header")))?;
            if !SECTIONS.contains(&name) {
                return Err(ConfigError(format!("line {line_no}: unknown config section `{name}`")));
            }
            section = Some(name.to_string());
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| ConfigError(format!("line {line_no}: expected `key = value`")))?;
        let key = key.trim();
        // validate against a scratch copy so errors surface for every section
        Settings::default().set(key, value).map_err(|e| ConfigError(format!("line {line_no}: {e}")))?;
        entries.push(Entry { section: section.clone(), key: key.to_string(), value: value.trim().to_string(), line: line_no });
    }
    Ok(entries)
}

/// Defaults, then the file's global keys, then its `[command]` section.
pub fn load_settings(path: Option<&Path>, command: &str) -> Result<Settings, ConfigError> {
    let mut settings = Settings::default();
    let Some(path) = path else { return Ok(settings) };
    let text = fs::read_to_string(path).map_err(|e| ConfigError(format!("cannot read config {}: {e}", path.display())))?;
    let entries = parse_config(&text)?;
    for scope in [None, Some(command)] {
        for e in entries.iter().filter(|e| e.section.as_deref() == scope) {
            settings.set(&e.key, &e.value)?;
        }
    }
    Ok(settings)
}
