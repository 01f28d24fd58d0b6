//! Assigning memory-pool items to the M database partitions.

mod category;
mod kmeans;
mod lsh;
mod spectral;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use category::partition_category;
pub use kmeans::{kmeans, KMeansConfig, KMeansResult};
pub use lsh::partition_randomization;
pub use spectral::{
    normalized_laplacian, partition_indexing, spectral_partition_graph, SpectralResult, SPECTRAL_SIZE_CAP,
};

use crate::corpus::{TaskKind, TextPair};
use crate::embed::Embedding;
use crate::error::{Error, Result};
use crate::index::HnswParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Randomization,
    Clustering,
    Indexing,
    Category,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [Strategy::Randomization, Strategy::Clustering, Strategy::Indexing, Strategy::Category];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Randomization => "randomization",
            Strategy::Clustering => "clustering",
            Strategy::Indexing => "indexing",
            Strategy::Category => "category",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidConfig(format!("unknown strategy `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionSpec {
    pub strategy: Strategy,
    pub m: usize,
    pub seed: u64,
}

impl PartitionSpec {
    pub fn new(strategy: Strategy, m: usize, seed: u64) -> Self {
        Self { strategy, m, seed }
    }

    /// Default strategy and partition count for a task: indexing with 4
    /// partitions for summarization, randomization with 3 for translation,
    /// category with 10 for dialogue.
    pub fn for_task(task: TaskKind, seed: u64) -> Self {
        match task {
            TaskKind::Summarization => Self::new(Strategy::Indexing, 4, seed),
            TaskKind::Translation => Self::new(Strategy::Randomization, 3, seed),
            TaskKind::Dialogue => Self::new(Strategy::Category, 10, seed),
        }
    }

    fn validate(&self, pool_len: usize) -> Result<()> {
        if self.m == 0 {
            return Err(Error::InvalidConfig("number of partitions must be at least 1".into()));
        }
        if self.m > pool_len {
            return Err(Error::InvalidConfig(format!(
                "{} partitions requested for a pool of {pool_len} items",
                self.m
            )));
        }
        Ok(())
    }
}

/// Item index → partition ids. Only the category strategy produces items
/// with more than one partition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionAssignment {
    pub m: usize,
    pub assignments: Vec<Vec<usize>>,
    /// Non-fatal conditions, e.g. a degenerate clustering input that fell
    /// back to round-robin.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl PartitionAssignment {
    pub fn from_labels(m: usize, labels: &[usize]) -> Self {
        Self { m, assignments: labels.iter().map(|&l| vec![l]).collect(), warnings: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.assignments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignments.is_empty()
    }

    /// Item indices of partition `p`, ascending.
    pub fn members(&self, p: usize) -> Vec<usize> {
        self.assignments
            .iter()
            .enumerate()
            .filter(|(_, ps)| ps.contains(&p))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.m];
        for ps in &self.assignments {
            for &p in ps {
                sizes[p] += 1;
            }
        }
        sizes
    }

    /// Single label per item, when every item has exactly one partition.
    pub fn labels(&self) -> Option<Vec<usize>> {
        self.assignments.iter().map(|ps| (ps.len() == 1).then(|| ps[0])).collect()
    }

    pub fn validate(&self, n_items: usize) -> Result<()> {
        if self.assignments.len() != n_items {
            return Err(Error::InvalidConfig(format!(
                "assignment covers {} items, pool has {n_items}",
                self.assignments.len()
            )));
        }
        for (i, ps) in self.assignments.iter().enumerate() {
            if ps.is_empty() {
                return Err(Error::InvalidConfig(format!("item {i} has no partition")));
            }
            if let Some(&p) = ps.iter().find(|&&p| p >= self.m) {
                return Err(Error::InvalidConfig(format!("item {i} assigned to partition {p} >= {}", self.m)));
            }
        }
        Ok(())
    }
}

/// Runs the strategy named in `spec`. `vectors` are the pool's memory
/// embeddings, `pairs` the pool records (used only by the category
/// strategy).
pub fn assign_partitions(
    pairs: &[TextPair],
    vectors: &[Embedding],
    spec: &PartitionSpec,
    hnsw: &HnswParams,
) -> Result<PartitionAssignment> {
    let assignment = match spec.strategy {
        Strategy::Randomization => partition_randomization(vectors, spec)?,
        Strategy::Clustering => partition_clustering(vectors, spec)?,
        Strategy::Indexing => partition_indexing(vectors, spec, hnsw)?,
        Strategy::Category => partition_category(pairs, spec)?,
    };
    assignment.validate(pairs.len().max(vectors.len()))?;
    Ok(assignment)
}

/// K-means over the raw embeddings with `k = M`.
pub fn partition_clustering(vectors: &[Embedding], spec: &PartitionSpec) -> Result<PartitionAssignment> {
    spec.validate(vectors.len())?;
    let points: Vec<&[f64]> = vectors.iter().map(Embedding::values).collect();
    let result = kmeans(&points, &KMeansConfig::new(spec.m, spec.seed));
    let mut assignment = PartitionAssignment::from_labels(spec.m, &result.labels);
    assignment.warnings = result.warnings;
    Ok(assignment)
}
