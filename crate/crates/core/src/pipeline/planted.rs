//! A synthetic corpus in which one partition holds useful memories and the
//! others hold noise, so learning can be checked against a known answer.
//!
//! Every topic `t` has a source vocabulary and one fixed reference `y_t`.
//! Queries are bags of source words with reference `y_t`. Each partition
//! holds one memory per topic:
//!
//! * planted partition: the source restates `y_t` word by word and adds a
//!   few topic words; the target is `y_t` with two words corrupted
//!   (ROUGE-1 0.8 against the reference);
//! * other partitions: the source is mostly topic words, so it looks more
//!   relevant to a query than the planted memory does; the target is drawn
//!   from a shuffled vocabulary of other topics' words (ROUGE-1 about 0.05).

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Dataset, TaskKind, TextPair};
use crate::embed::Embedder;
use crate::error::{Error, Result};
use crate::index::{build_partitioned_db, EmbeddedPool, HnswParams, PartitionedDatabase};
use crate::metrics::{Metric, MetricKind};
use crate::partition::{PartitionAssignment, PartitionSpec, Strategy};

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedConfig {
    pub m: usize,
    pub planted: usize,
    /// Memories per partition, which is also the number of topics.
    pub n_per_partition: usize,
    pub train_per_topic: usize,
    pub dev_per_topic: usize,
    pub test_per_topic: usize,
    pub dimension: usize,
    pub seed: u64,
}

impl PlantedConfig {
    pub fn new(m: usize, planted: usize, n_per_partition: usize, seed: u64) -> Self {
        Self { m, planted, n_per_partition, train_per_topic: 5, dev_per_topic: 1, test_per_topic: 1, dimension: 1024, seed }
    }
}

const SOURCE_WORDS: usize = 12;
const TARGET_WORDS: usize = 10;
const CORRUPTED: usize = 2;
const QUERY_WORDS: usize = 8;
const PLANTED_SOURCE_EXTRA: usize = 8;
const NOISE_SOURCE_WORDS: usize = 10;
const FILLER_WORDS: usize = 2;

pub struct PlantedEnvironment {
    pub cfg: PlantedConfig,
    pub embedder: Embedder,
    pub db: PartitionedDatabase,
    pub pool: EmbeddedPool,
    /// Partition of each pool record.
    pub labels: Vec<usize>,
    pub train: Dataset,
    pub dev: Dataset,
    /// Held-out queries not used for training or early stopping.
    pub test: Dataset,
    pub planted: usize,
}

impl PlantedEnvironment {
    /// The same memories in a single partition.
    pub fn single_db(&self) -> Result<PartitionedDatabase> {
        let a = PartitionAssignment::from_labels(1, &vec![0; self.labels.len()]);
        build_partitioned_db(&self.pool, &a, PartitionSpec::new(Strategy::Category, 1, self.cfg.seed), self.db.params)
    }

    /// A fresh copy of the multi-partition database.
    pub fn rebuild_db(&self) -> Result<PartitionedDatabase> {
        let a = PartitionAssignment::from_labels(self.cfg.m, &self.labels);
        build_partitioned_db(&self.pool, &a, self.db.spec, self.db.params)
    }
}

fn words(prefix: &str, topic: usize, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{topic}w{i}")).collect()
}

fn sample_words(rng: &mut ChaCha8Rng, from: &[String], n: usize) -> Vec<String> {
    from.choose_multiple(rng, n).cloned().collect()
}

pub fn build_planted_environment(m: usize, planted: usize, n_per_partition: usize, seed: u64) -> Result<PlantedEnvironment> {
    build_planted(&PlantedConfig::new(m, planted, n_per_partition, seed))
}

pub fn build_planted(cfg: &PlantedConfig) -> Result<PlantedEnvironment> {
    if cfg.m == 0 || cfg.planted >= cfg.m {
        return Err(Error::InvalidConfig(format!("planted partition {} must be below M = {}", cfg.planted, cfg.m)));
    }
    if cfg.n_per_partition < 2 {
        return Err(Error::InvalidConfig("the planted environment needs at least 2 topics".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.n_per_partition;
    let references: Vec<Vec<String>> = (0..n).map(|t| words("t", t, TARGET_WORDS)).collect();
    let r1 = Metric::new(MetricKind::Rouge1);

    let mut pool = Vec::with_capacity(n * cfg.m);
    let mut labels = Vec::with_capacity(n * cfg.m);
    let (mut train, mut dev, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for t in 0..n {
        let src = words("s", t, SOURCE_WORDS);
        let reference = references[t].join(" ");

        let mut planted_target = references[t].clone();
        for (k, pos) in rand::seq::index::sample(&mut rng, TARGET_WORDS, CORRUPTED).into_iter().enumerate() {
            planted_target[pos] = format!("j{t}w{k}");
        }
        let mut planted_source = references[t].clone();
        planted_source.extend(sample_words(&mut rng, &src, PLANTED_SOURCE_EXTRA));
        let planted_target = planted_target.join(" ");
        let planted_score = r1.delta(&planted_target, &reference);

        for p in 0..cfg.m {
            if p == cfg.planted {
                pool.push(TextPair::new(planted_source.join(" "), planted_target.clone()));
            } else {
                let mut source = sample_words(&mut rng, &src, NOISE_SOURCE_WORDS);
                source.extend((0..FILLER_WORDS).map(|_| format!("f{}", rng.random_range(0..10_000))));
                source.shuffle(&mut rng);
                let mut target: Vec<String> = (0..TARGET_WORDS)
                    .map(|_| {
                        let other = (t + rng.random_range(1..n)) % n;
                        references[other][rng.random_range(0..TARGET_WORDS)].clone()
                    })
                    .collect();
                if rng.random_bool(0.5) {
                    let pos = rng.random_range(0..TARGET_WORDS);
                    target[pos] = references[t][rng.random_range(0..TARGET_WORDS)].clone();
                }
                let target = target.join(" ");
                let noise_score = r1.delta(&target, &reference);
                if noise_score >= planted_score {
                    return Err(Error::Invariant(format!("noise memory for topic {t} scores {noise_score} >= planted {planted_score}")));
                }
                pool.push(TextPair::new(source.join(" "), target));
            }
            labels.push(p);
        }

        for (count, out) in [(cfg.train_per_topic, &mut train), (cfg.dev_per_topic, &mut dev), (cfg.test_per_topic, &mut test)] {
            for _ in 0..count {
                out.push(TextPair::new(sample_words(&mut rng, &src, QUERY_WORDS).join(" "), reference.clone()));
            }
        }
    }
    dev.shuffle(&mut rng);
    test.shuffle(&mut rng);

    let embedder = Embedder::hash(cfg.dimension, cfg.seed);
    let pool = EmbeddedPool::new(Dataset::new(TaskKind::Summarization, pool), &embedder)?;
    let assignment = PartitionAssignment::from_labels(cfg.m, &labels);
    let params = HnswParams { seed: cfg.seed, ..HnswParams::default() };
    let db = build_partitioned_db(&pool, &assignment, PartitionSpec::new(Strategy::Category, cfg.m, cfg.seed), params)?;
    Ok(PlantedEnvironment {
        cfg: cfg.clone(),
        embedder,
        db,
        pool,
        labels,
        train: Dataset::new(TaskKind::Summarization, train),
        dev: Dataset::new(TaskKind::Summarization, dev),
        test: Dataset::new(TaskKind::Summarization, test),
        planted: cfg.planted,
    })
}
