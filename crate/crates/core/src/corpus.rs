//! Text-pair datasets: JSONL loading, validation and the train / memory /
//! dev split.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One source/target record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextPair {
    pub source: String,
    pub target: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub categories: Option<Vec<String>>,
}

impl TextPair {
    pub fn new(source: impl Into<String>, target: impl Into<String>) -> Self {
        Self { source: source.into(), target: target.into(), categories: None }
    }

    pub fn with_categories(mut self, categories: Vec<String>) -> Self {
        self.categories = Some(categories);
        self
    }

    fn validate(&self) -> std::result::Result<(), String> {
        if self.source.trim().is_empty() {
            return Err("`source` is empty".into());
        }
        if self.target.trim().is_empty() {
            return Err("`target` is empty".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Summarization,
    Translation,
    Dialogue,
}

impl TaskKind {
    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Summarization => "summarization",
            TaskKind::Translation => "translation",
            TaskKind::Dialogue => "dialogue",
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "summarization" => Ok(TaskKind::Summarization),
            "translation" => Ok(TaskKind::Translation),
            "dialogue" => Ok(TaskKind::Dialogue),
            _ => Err(Error::InvalidConfig(format!("unknown task `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dataset {
    pub task: TaskKind,
    pub pairs: Vec<TextPair>,
}

impl Dataset {
    pub fn new(task: TaskKind, pairs: Vec<TextPair>) -> Self {
        Self { task, pairs }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Sub-dataset holding the pairs at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        Dataset::new(self.task, indices.iter().map(|&i| self.pairs[i].clone()).collect())
    }

    /// Writes one JSON object per line.
    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(fs::File::create(path)?);
        for pair in &self.pairs {
            serde_json::to_writer(&mut out, pair)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Parses a JSONL dataset. Lines are validated strictly: a malformed line
/// fails the whole load. Blank lines are malformed too.
pub fn parse_dataset(text: &str, task: TaskKind) -> Result<Dataset> {
    let mut pairs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let pair: TextPair = serde_json::from_str(line)
            .map_err(|e| Error::MalformedRecord { line: line_no, reason: e.to_string() })?;
        pair.validate().map_err(|reason| Error::MalformedRecord { line: line_no, reason })?;
        pairs.push(pair);
    }
    if pairs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(Dataset::new(task, pairs))
}

pub fn load_dataset(path: &Path, task: TaskKind) -> Result<Dataset> {
    if !path.is_file() {
        return Err(Error::FileNotFound(path.to_path_buf()));
    }
    let text = fs::read_to_string(path)?;
    parse_dataset(&text, task)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
    pub dev_count: usize,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self { train_fraction: 0.10, seed: 42, dev_count: 200 }
    }
}

/// Index sets produced by [`split_indices`]; each list is sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub memory_pool: Vec<usize>,
    pub dev: Vec<usize>,
}

pub fn split_indices(len: usize, spec: &SplitSpec) -> Result<SplitIndices> {
    if len < 3 {
        return Err(Error::InvalidSpec(format!("need at least 3 pairs, got {len}")));
    }
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(Error::InvalidSpec(format!(
            "train_fraction must lie in (0, 1), got {}",
            spec.train_fraction
        )));
    }
    let n_train = (spec.train_fraction * len as f64).round() as usize;
    if n_train + spec.dev_count >= len {
        return Err(Error::InvalidSpec(format!(
            "{n_train} train + {} dev leaves no memory pool out of {len} pairs",
            spec.dev_count
        )));
    }
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let mut train = order[..n_train].to_vec();
    let mut dev = order[n_train..n_train + spec.dev_count].to_vec();
    let mut memory_pool = order[n_train + spec.dev_count..].to_vec();
    train.sort_unstable();
    dev.sort_unstable();
    memory_pool.sort_unstable();
    Ok(SplitIndices { train, memory_pool, dev })
}

/// Splits into (train, memory_pool, dev).
pub fn split_dataset(ds: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset, Dataset)> {
    let idx = split_indices(ds.len(), spec)?;
    Ok((ds.select(&idx.train), ds.select(&idx.memory_pool), ds.select(&idx.dev)))
}
