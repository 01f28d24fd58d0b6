//! Training, inference and evaluation end to end.

mod planted;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agents::{agent_s_episode, append_traces, state_from_tops, AgentConfig, Env, OuterEpisode, Query, RefinePolicy};
use crate::corpus::{Dataset, TaskKind};
use crate::embed::Embedder;
use crate::error::{Error, Result};
use crate::generator::Generator;
use crate::index::PartitionedDatabase;
use crate::metrics::{corpus_bleu, distinct_n, Metric, MetricKind};
use crate::rl::{argmax, DqnAgent, DqnAgentState, DqnConfig, RngState};

pub use planted::{build_planted, build_planted_environment, PlantedConfig, PlantedEnvironment};

/// How Agent-R chooses candidates during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RefineMode {
    #[default]
    Learned,
    /// Always the candidate most similar to the current hypothesis.
    Greedy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub agent: AgentConfig,
    pub dqn: DqnConfig,
    pub max_episodes: usize,
    pub eval_every: usize,
    pub patience: usize,
    /// Number of dev examples scored at each evaluation.
    pub dev_slice: usize,
    pub refine: RefineMode,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            agent: AgentConfig::default(),
            dqn: DqnConfig::default(),
            max_episodes: 2000,
            eval_every: 100,
            patience: 3,
            dev_slice: 50,
            refine: RefineMode::Learned,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.agent.validate()?;
        self.dqn.validate()?;
        if self.eval_every == 0 || self.patience == 0 {
            return Err(Error::InvalidConfig("eval_every and patience must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub episode: usize,
    pub score: f64,
}

/// Training state for both agents; checkpointable between episodes.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub cfg: TrainConfig,
    pub agent_s: DqnAgent,
    pub agent_r: DqnAgent,
    rng: ChaCha8Rng,
    pub episodes: usize,
    pub history: Vec<EvalPoint>,
    best: f64,
    stale: usize,
    pub stopped: bool,
}

#[derive(Serialize, Deserialize)]
struct TrainerState {
    cfg: TrainConfig,
    rng: RngState,
    episodes: usize,
    history: Vec<EvalPoint>,
    /// `None` until the first dev evaluation; JSON has no infinities.
    best: Option<f64>,
    stale: usize,
    stopped: bool,
}

/// Totals over a [`Trainer::train`] call.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TrainSummary {
    pub episodes: usize,
    pub outer_steps: usize,
    pub inner_steps: usize,
    pub total_reward: f64,
    pub commits: usize,
    pub early_stopped: bool,
}

const AGENT_S_FILE: &str = "agent_s.json";
const AGENT_R_FILE: &str = "agent_r.json";
const TRAINER_FILE: &str = "trainer.json";
const DB_DIR: &str = "db";

impl Trainer {
    pub fn new(cfg: TrainConfig, m: usize) -> Result<Self> {
        cfg.validate()?;
        let agent_s = DqnAgent::new(m, m, DqnConfig { seed: cfg.seed, ..cfg.dqn.clone() })?;
        let k = cfg.agent.k;
        let agent_r = DqnAgent::new(k, k, DqnConfig { seed: cfg.seed.wrapping_add(1), ..cfg.dqn.clone() })?;
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(2));
        Ok(Self { cfg, agent_s, agent_r, rng, episodes: 0, history: Vec::new(), best: f64::NEG_INFINITY, stale: 0, stopped: false })
    }

    pub fn env<'a>(&'a self, embedder: &'a Embedder, generator: &'a Generator) -> Env<'a> {
        Env { embedder, generator, cfg: &self.cfg.agent }
    }

    /// One training pair drawn uniformly from `train`, followed by one DQN
    /// update per agent for each outer step taken.
    pub fn run_episode(&mut self, db: &mut PartitionedDatabase, embedder: &Embedder, generator: &Generator, train: &Dataset) -> Result<OuterEpisode> {
        if train.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let pair = &train.pairs[self.rng.random_range(0..train.len())];
        let env = Env { embedder, generator, cfg: &self.cfg.agent };
        let episode = {
            let mut policy = match self.cfg.refine {
                RefineMode::Learned => RefinePolicy::Learned(&mut self.agent_r),
                RefineMode::Greedy => RefinePolicy::Greedy,
            };
            agent_s_episode(db, env, &mut self.agent_s, &mut policy, &pair.source, &pair.target, &mut self.rng)?
        };
        for t in &episode.s_transitions {
            self.agent_s.remember(t.clone())?;
        }
        if self.cfg.refine == RefineMode::Learned {
            for t in &episode.r_transitions {
                self.agent_r.remember(t.clone())?;
            }
        }
        for _ in 0..episode.s_transitions.len() {
            self.agent_s.train_step()?;
            if self.cfg.refine == RefineMode::Learned {
                self.agent_r.train_step()?;
            }
        }
        self.episodes += 1;
        Ok(episode)
    }

    /// Mean metric over the dev slice with greedy Agent-S.
    pub fn dev_score(&self, db: &PartitionedDatabase, embedder: &Embedder, generator: &Generator, dev: &Dataset) -> Result<f64> {
        let n = dev.len().min(self.cfg.dev_slice);
        if n == 0 {
            return Ok(0.0);
        }
        let mut total = 0.0;
        for pair in &dev.pairs[..n] {
            let out = infer(db, embedder, generator, &self.agent_s, self.cfg.agent.task, &pair.source)?;
            total += self.cfg.agent.metric.delta(&out.hypothesis, &pair.target);
        }
        Ok(total / n as f64)
    }

    /// Runs episodes until `max_episodes` in total, or until the dev score
    /// has not improved for `patience` consecutive evaluations. Episode
    /// traces are appended to `trace_log` when given.
    pub fn train(
        &mut self,
        db: &mut PartitionedDatabase,
        embedder: &Embedder,
        generator: &Generator,
        train: &Dataset,
        dev: &Dataset,
        trace_log: Option<&Path>,
    ) -> Result<TrainSummary> {
        self.train_until(db, embedder, generator, train, dev, trace_log, self.cfg.max_episodes)
    }

    /// Like [`Trainer::train`] but stops at `until` total episodes (capped
    /// by `max_episodes`), which allows checkpointing mid-run.
    #[allow(clippy::too_many_arguments)]
    pub fn train_until(
        &mut self,
        db: &mut PartitionedDatabase,
        embedder: &Embedder,
        generator: &Generator,
        train: &Dataset,
        dev: &Dataset,
        trace_log: Option<&Path>,
        until: usize,
    ) -> Result<TrainSummary> {
        let mut summary = TrainSummary::default();
        let until = until.min(self.cfg.max_episodes);
        while !self.stopped && self.episodes < until {
            let ep = self.run_episode(db, embedder, generator, train)?;
            summary.episodes += 1;
            summary.outer_steps += ep.s_transitions.len();
            summary.inner_steps += ep.r_transitions.len();
            summary.total_reward += ep.total_reward();
            summary.commits += ep.traces.iter().flat_map(|t| &t.committed).filter(|c| **c).count();
            if let Some(path) = trace_log {
                append_traces(path, &ep.traces)?;
            }
            if self.episodes.is_multiple_of(self.cfg.eval_every) && !dev.is_empty() {
                let score = self.dev_score(db, embedder, generator, dev)?;
                log::info!("episode {}: dev {} = {score:.4}", self.episodes, self.cfg.agent.metric.kind);
                self.history.push(EvalPoint { episode: self.episodes, score });
                if score > self.best {
                    self.best = score;
                    self.stale = 0;
                } else {
                    self.stale += 1;
                    if self.stale >= self.cfg.patience {
                        self.stopped = true;
                        summary.early_stopped = true;
                    }
                }
            }
        }
        Ok(summary)
    }

    /// Writes agents, trainer state and the database under `dir`.
    pub fn save_checkpoint(&self, dir: &Path, db: &PartitionedDatabase) -> Result<()> {
        fs::create_dir_all(dir)?;
        let write = |name: &str, bytes: Vec<u8>| -> Result<()> {
            let tmp = dir.join(format!(".{name}.tmp"));
            fs::write(&tmp, bytes)?;
            fs::rename(tmp, dir.join(name))?;
            Ok(())
        };
        write(AGENT_S_FILE, serde_json::to_vec(&self.agent_s.snapshot())?)?;
        write(AGENT_R_FILE, serde_json::to_vec(&self.agent_r.snapshot())?)?;
        let state = TrainerState {
            cfg: self.cfg.clone(),
            rng: RngState::capture(&self.rng),
            episodes: self.episodes,
            history: self.history.clone(),
            best: self.best.is_finite().then_some(self.best),
            stale: self.stale,
            stopped: self.stopped,
        };
        write(TRAINER_FILE, serde_json::to_vec_pretty(&state)?)?;
        db.save(&dir.join(DB_DIR))
    }

    pub fn load_checkpoint(dir: &Path) -> Result<(Self, PartitionedDatabase)> {
        let read = |name: &str| -> Result<Vec<u8>> {
            let path = dir.join(name);
            if !path.is_file() {
                return Err(Error::FileNotFound(path));
            }
            Ok(fs::read(path)?)
        };
        let agent_s = DqnAgent::restore(serde_json::from_slice::<DqnAgentState>(&read(AGENT_S_FILE)?)?)?;
        let agent_r = DqnAgent::restore(serde_json::from_slice::<DqnAgentState>(&read(AGENT_R_FILE)?)?)?;
        let st: TrainerState = serde_json::from_slice(&read(TRAINER_FILE)?)?;
        let db = PartitionedDatabase::load(&dir.join(DB_DIR))?;
        if agent_s.net.input_dim() != db.m() {
            return Err(Error::Checkpoint(format!("Agent-S expects {} partitions, database has {}", agent_s.net.input_dim(), db.m())));
        }
        let trainer = Self {
            cfg: st.cfg,
            agent_s,
            agent_r,
            rng: st.rng.restore()?,
            episodes: st.episodes,
            history: st.history,
            best: st.best.unwrap_or(f64::NEG_INFINITY),
            stale: st.stale,
            stopped: st.stopped,
        };
        Ok((trainer, db))
    }
}

/// Builds a trainer and runs it to completion.
pub fn train(
    db: &mut PartitionedDatabase,
    embedder: &Embedder,
    generator: &Generator,
    train_set: &Dataset,
    dev_set: &Dataset,
    cfg: TrainConfig,
) -> Result<(Trainer, TrainSummary)> {
    let mut trainer = Trainer::new(cfg, db.m())?;
    let summary = trainer.train(db, embedder, generator, train_set, dev_set, None)?;
    Ok((trainer, summary))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Inference {
    pub partition: usize,
    /// `None` when the chosen partition is empty; the hypothesis is then
    /// generated without a demonstration.
    pub memory: Option<usize>,
    pub hypothesis: String,
}

/// Splits inference wall-clock time into its stages.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimes {
    pub retrieval: Duration,
    pub generation: Duration,
}

/// Greedy partition choice on the inference state, Top-1 retrieval and one
/// generation call. The database is not modified.
pub fn infer(db: &PartitionedDatabase, embedder: &Embedder, generator: &Generator, agent_s: &DqnAgent, task: TaskKind, x: &str) -> Result<Inference> {
    infer_timed(db, embedder, generator, agent_s, task, x).map(|(i, _)| i)
}

pub fn infer_timed(
    db: &PartitionedDatabase,
    embedder: &Embedder,
    generator: &Generator,
    agent_s: &DqnAgent,
    task: TaskKind,
    x: &str,
) -> Result<(Inference, StageTimes)> {
    let start = Instant::now();
    let r = retrieve(db, embedder, agent_s, x)?;
    let retrieval = start.elapsed();
    let start = Instant::now();
    let hypothesis = generate(generator, task, x, &r)?;
    let generation = start.elapsed();
    Ok((Inference { partition: r.partition, memory: r.memory, hypothesis }, StageTimes { retrieval, generation }))
}

/// The retrieval half of inference: the chosen partition and a copy of its
/// Top-1 memory, if any.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Retrieval {
    pub partition: usize,
    pub memory: Option<usize>,
    pub source: String,
    pub target: String,
}

/// Builds the inference state (query source against memory sources),
/// picks the greedy partition and fetches its Top-1 memory.
pub fn retrieve(db: &PartitionedDatabase, embedder: &Embedder, agent_s: &DqnAgent, x: &str) -> Result<Retrieval> {
    retrieve_with(db, embedder, x, |sims| Ok(argmax(&agent_s.q_values(sims)?)))
}

/// [`retrieve`] with an ε-greedy partition choice drawn from the agent's
/// own RNG; `epsilon = 1` is a uniformly random partition.
pub fn retrieve_exploring(db: &PartitionedDatabase, embedder: &Embedder, agent_s: &mut DqnAgent, x: &str, epsilon: f64) -> Result<Retrieval> {
    retrieve_with(db, embedder, x, |sims| agent_s.act_with_epsilon(sims, epsilon))
}

fn retrieve_with(db: &PartitionedDatabase, embedder: &Embedder, x: &str, choose: impl FnOnce(&[f64]) -> Result<usize>) -> Result<Retrieval> {
    let query = Query::new(embedder, x, None)?;
    let tops = query.top1_all(db)?;
    let partition = choose(&state_from_tops(&tops).sims)?;
    if partition >= tops.len() {
        return Err(Error::Invariant(format!("partition {partition} chosen among {}", tops.len())));
    }
    match tops[partition] {
        Some((id, _)) => {
            let mem = db.memory(partition, id)?;
            Ok(Retrieval { partition, memory: Some(id), source: mem.source.clone(), target: mem.target.clone() })
        }
        None => Ok(Retrieval { partition, memory: None, source: String::new(), target: String::new() }),
    }
}

/// The generation half: one call with the retrieved memory as the
/// demonstration (empty when the partition was).
pub fn generate(generator: &Generator, task: TaskKind, x: &str, r: &Retrieval) -> Result<String> {
    generator.hypothesis(task, x, &r.source, &r.target)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleScore {
    pub index: usize,
    pub partition: usize,
    pub hypothesis: String,
    pub reference: String,
    /// Sentence-level scores keyed by metric name.
    pub scores: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub index_build_secs: f64,
    pub retrieval_secs: f64,
    pub generation_secs: f64,
    pub generation_calls: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub examples: Vec<ExampleScore>,
    /// Mean of the per-example scores for sentence-level metrics; corpus
    /// statistics for distinct-n (and `bleu_corpus`).
    pub aggregates: BTreeMap<String, f64>,
    pub timings: Timings,
    pub partition_counts: Vec<usize>,
}

impl EvalReport {
    pub fn aggregate(&self, kind: MetricKind) -> Option<f64> {
        self.aggregates.get(kind.name()).copied()
    }

    /// Per-example CSV: `index,partition,<metric>...`.
    pub fn to_csv(&self) -> String {
        let names: Vec<&String> = self.examples.first().map(|e| e.scores.keys().collect()).unwrap_or_default();
        let mut out = String::from("index,partition");
        for n in &names {
            out.push(',');
            out.push_str(n);
        }
        out.push('\n');
        for e in &self.examples {
            out.push_str(&format!("{},{}", e.index, e.partition));
            for n in &names {
                out.push_str(&format!(",{}", e.scores[*n]));
            }
            out.push('\n');
        }
        out
    }
}

/// Runs inference on every test pair and scores it. Sequential, so stage
/// timings are not distorted by contention.
pub fn evaluate(
    db: &PartitionedDatabase,
    embedder: &Embedder,
    generator: &Generator,
    agent_s: &DqnAgent,
    test: &Dataset,
    metrics: &[MetricKind],
) -> Result<EvalReport> {
    let mut report = EvalReport {
        partition_counts: vec![0; db.m()],
        timings: Timings { index_build_secs: db.build_times().iter().map(Duration::as_secs_f64).fold(0.0, |a, b| a + b), ..Timings::default() },
        ..EvalReport::default()
    };
    let sentence: Vec<MetricKind> = metrics.iter().copied().filter(|m| !m.is_corpus_level()).collect();
    // Stage by stage, so each stage is timed with its own working set warm.
    let mut retrieved = Vec::with_capacity(test.len());
    for pair in &test.pairs {
        let start = Instant::now();
        retrieved.push(retrieve(db, embedder, agent_s, &pair.source)?);
        report.timings.retrieval_secs += start.elapsed().as_secs_f64();
    }
    let mut hyps = Vec::with_capacity(test.len());
    for (index, (pair, r)) in test.pairs.iter().zip(&retrieved).enumerate() {
        let start = Instant::now();
        let hypothesis = generate(generator, test.task, &pair.source, r)?;
        report.timings.generation_secs += start.elapsed().as_secs_f64();
        report.timings.generation_calls += 1;
        report.partition_counts[r.partition] += 1;
        let scores = sentence.iter().map(|k| (k.name().to_string(), Metric::new(*k).delta(&hypothesis, &pair.target))).collect();
        hyps.push(hypothesis.clone());
        report.examples.push(ExampleScore { index, partition: r.partition, hypothesis, reference: pair.target.clone(), scores });
    }
    let n = report.examples.len();
    for k in metrics {
        let value = match k {
            MetricKind::Distinct1 => distinct_n(&hyps, 1),
            MetricKind::Distinct2 => distinct_n(&hyps, 2),
            _ if n == 0 => 0.0,
            _ => report.examples.iter().map(|e| e.scores[k.name()]).sum::<f64>() / n as f64,
        };
        report.aggregates.insert(k.name().to_string(), value);
    }
    if metrics.contains(&MetricKind::Bleu) {
        let refs: Vec<String> = test.pairs.iter().map(|p| p.target.clone()).collect();
        let corpus = if n == 0 { 0.0 } else { corpus_bleu(&hyps, &refs, Default::default()) };
        report.aggregates.insert("bleu_corpus".into(), corpus);
    }
    Ok(report)
}
