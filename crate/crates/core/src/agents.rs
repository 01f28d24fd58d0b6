//! The partition-selection agent (Agent-S) and the memory-refinement agent
//! (Agent-R): state construction, rewards and the nested training episode.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::TaskKind;
use crate::embed::{cosine_sim, Embedder, Embedding};
use crate::error::{Error, Result};
use crate::generator::{CandidatePool, Generator};
use crate::index::{PartitionedDatabase, Space};
use crate::metrics::{Metric, MetricKind};
use crate::rl::{argmax, DqnAgent, Transition};

/// Tolerance for the reward bookkeeping identities.
pub const TELESCOPE_TOLERANCE: f64 = 1e-9;

/// State entry for a partition with no memories.
pub const EMPTY_PARTITION_SIM: f64 = -1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub task: TaskKind,
    pub metric: Metric,
    /// Candidate pool size K.
    pub k: usize,
    /// Outer (Agent-S) horizon.
    pub i_max: usize,
    /// Inner (Agent-R) horizon.
    pub j_max: usize,
    /// The outer loop ends early after this many consecutive inner episodes
    /// without reward.
    pub zero_reward_stop: usize,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            task: TaskKind::Summarization,
            metric: Metric::new(MetricKind::Rouge1),
            k: 3,
            i_max: 3,
            j_max: 4,
            zero_reward_stop: 2,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.i_max == 0 || self.j_max == 0 {
            return Err(Error::InvalidConfig(format!(
                "k, i_max and j_max must be positive (got {}, {}, {})",
                self.k, self.i_max, self.j_max
            )));
        }
        if self.metric.kind.is_corpus_level() {
            return Err(Error::InvalidConfig(format!(
                "{} is a corpus-level metric and cannot score single hypotheses for rewards",
                self.metric.kind
            )));
        }
        Ok(())
    }
}

/// Shared, read-only collaborators of an episode.
#[derive(Clone, Copy)]
pub struct Env<'a> {
    pub embedder: &'a Embedder,
    pub generator: &'a Generator,
    pub cfg: &'a AgentConfig,
}

impl Env<'_> {
    pub fn delta(&self, h: &str, y: &str) -> f64 {
        self.cfg.metric.delta(h, y)
    }
}

/// Per-partition similarity of the Top-1 memory to the query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSState {
    pub sims: Vec<f64>,
}

/// Similarity of the current hypothesis to each pool candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentRState {
    pub sims: Vec<f64>,
}

/// A query representation together with the memory embeddings it is
/// compared against.
#[derive(Debug, Clone)]
pub struct Query {
    pub embedding: Embedding,
    pub space: Space,
}

impl Query {
    /// σ(x ⊕ y) against memory pair embeddings when the reference is known,
    /// σ(x) against memory source embeddings otherwise.
    pub fn new(embedder: &Embedder, x: &str, y: Option<&str>) -> Result<Self> {
        Ok(match y {
            Some(y) => Self { embedding: embedder.embed_pair(x, y)?, space: Space::Pair },
            None => Self { embedding: embedder.embed_text(x)?, space: Space::Source },
        })
    }

    /// Top-1 memory of a partition as `(memory id, similarity)`.
    pub fn top1(&self, db: &PartitionedDatabase, partition: usize) -> Result<Option<(usize, f64)>> {
        Ok(db.knn_search(partition, self.space, &self.embedding, 1)?.into_iter().next())
    }

    /// Top-1 of every partition, in partition order.
    pub fn top1_all(&self, db: &PartitionedDatabase) -> Result<Vec<Option<(usize, f64)>>> {
        (0..db.m()).map(|p| self.top1(db, p)).collect()
    }

    pub fn state(&self, db: &PartitionedDatabase) -> Result<AgentSState> {
        Ok(state_from_tops(&self.top1_all(db)?))
    }
}

pub fn state_from_tops(tops: &[Option<(usize, f64)>]) -> AgentSState {
    AgentSState { sims: tops.iter().map(|t| t.map_or(EMPTY_PARTITION_SIM, |(_, s)| s)).collect() }
}

pub fn build_state_s(db: &PartitionedDatabase, embedder: &Embedder, x: &str, y: Option<&str>) -> Result<AgentSState> {
    Query::new(embedder, x, y)?.state(db)
}

/// Epsilon-greedy partition choice while training, greedy otherwise.
pub fn act_s(agent: &mut DqnAgent, state: &AgentSState, training: bool) -> Result<usize> {
    if training {
        agent.act(&state.sims)
    } else {
        agent.greedy(&state.sims)
    }
}

pub fn build_state_r(embedder: &Embedder, h: &str, pool: &CandidatePool) -> Result<AgentRState> {
    let he = embedder.embed_text(h)?;
    let sims = pool
        .candidates
        .iter()
        .map(|c| cosine_sim(&he, &embedder.embed_text(c)?))
        .collect::<Result<_>>()?;
    Ok(AgentRState { sims })
}

/// How Agent-R picks a candidate.
pub enum RefinePolicy<'a> {
    /// Epsilon-greedy over a learned Q-network; experiences are returned to
    /// the caller for replay.
    Learned(&'a mut DqnAgent),
    /// Always the candidate most similar to the current hypothesis.
    Greedy,
}

impl RefinePolicy<'_> {
    fn act(&mut self, state: &AgentRState) -> Result<usize> {
        match self {
            RefinePolicy::Learned(agent) => agent.act(&state.sims),
            RefinePolicy::Greedy => Ok(argmax(&state.sims)),
        }
    }
}

/// Record of one inner (Agent-R) episode on a single retrieved memory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub partition: usize,
    /// `None` when the chosen partition was empty.
    pub memory: Option<usize>,
    pub initial_delta: f64,
    pub final_delta: f64,
    pub r_inner: Vec<f64>,
    pub r_outer: f64,
    pub actions: Vec<usize>,
    /// h₁ followed by the hypothesis held after each step.
    pub hypotheses: Vec<String>,
    pub committed: Vec<bool>,
}

impl EpisodeTrace {
    fn empty(partition: usize) -> Self {
        Self {
            partition,
            memory: None,
            initial_delta: 0.0,
            final_delta: 0.0,
            r_inner: Vec::new(),
            r_outer: 0.0,
            actions: Vec::new(),
            hypotheses: Vec::new(),
            committed: Vec::new(),
        }
    }

    pub fn reward_sum(&self) -> f64 {
        self.r_inner.iter().sum()
    }

    /// Checks that inner rewards telescope to the net metric change, that
    /// the outer reward equals their sum, and that no reward is negative.
    pub fn check(&self) -> std::result::Result<(), String> {
        let sum = self.reward_sum();
        let net = self.final_delta - self.initial_delta;
        if (sum - net).abs() > TELESCOPE_TOLERANCE {
            return Err(format!("inner rewards sum to {sum} but the metric moved by {net}"));
        }
        if (self.r_outer - sum).abs() > TELESCOPE_TOLERANCE {
            return Err(format!("outer reward {} differs from inner sum {sum}", self.r_outer));
        }
        if let Some(r) = self.r_inner.iter().find(|r| **r < 0.0) {
            return Err(format!("negative inner reward {r}"));
        }
        Ok(())
    }
}

/// Appends traces as JSON lines.
pub fn append_traces(path: &Path, traces: &[EpisodeTrace]) -> Result<()> {
    let file = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
    let mut w = std::io::BufWriter::new(file);
    for t in traces {
        serde_json::to_writer(&mut w, t)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Agent-R's inner loop on memory `memory_id` of partition `m`.
///
/// Each step draws a fresh candidate pool from the memory's source, picks a
/// candidate, and regenerates the hypothesis with that candidate as the
/// demonstration target. Only a strict metric improvement earns a reward,
/// replaces the stored target and becomes the held hypothesis. The returned
/// transitions chain each step's state to the next pool's state; the last
/// one is terminal.
#[allow(clippy::too_many_arguments)]
pub fn agent_r_episode<R: Rng + ?Sized>(
    db: &mut PartitionedDatabase,
    env: Env<'_>,
    policy: &mut RefinePolicy<'_>,
    m: usize,
    memory_id: usize,
    x: &str,
    y: &str,
    h0: String,
    rng: &mut R,
) -> Result<(EpisodeTrace, Vec<Transition>)> {
    let cfg = env.cfg;
    let mut h = h0;
    let mut d = env.delta(&h, y);
    let mut trace = EpisodeTrace {
        partition: m,
        memory: Some(memory_id),
        initial_delta: d,
        final_delta: d,
        r_inner: Vec::with_capacity(cfg.j_max),
        r_outer: 0.0,
        actions: Vec::with_capacity(cfg.j_max),
        hypotheses: vec![h.clone()],
        committed: Vec::with_capacity(cfg.j_max),
    };
    let mut transitions = Vec::with_capacity(cfg.j_max);

    let new_pool = |db: &PartitionedDatabase, rng: &mut R| -> Result<CandidatePool> {
        let mem = db.memory(m, memory_id)?;
        env.generator.generate_candidates(cfg.task, &mem.source, &mem.target, cfg.k, rng.random())
    };
    let mut pool = new_pool(db, rng)?;
    let mut state = build_state_r(env.embedder, &h, &pool)?;
    for j in 0..cfg.j_max {
        let a = policy.act(&state)?;
        let candidate = pool.candidates[a].clone();
        let source = db.memory(m, memory_id)?.source.clone();
        let h_new = env.generator.hypothesis(cfg.task, x, &source, &candidate)?;
        let d_new = env.delta(&h_new, y);
        let improved = d_new > d;
        let r = if improved { d_new - d } else { 0.0 };
        if improved {
            db.update_memory_target(env.embedder, m, memory_id, &candidate)?;
            h = h_new;
            d = d_new;
        }
        trace.r_inner.push(r);
        trace.actions.push(a);
        trace.committed.push(improved);
        trace.hypotheses.push(h.clone());

        let next = if j + 1 < cfg.j_max {
            pool = new_pool(db, rng)?;
            let s = build_state_r(env.embedder, &h, &pool)?;
            Some(std::mem::replace(&mut state, s))
        } else {
            None
        };
        match next {
            Some(prev) => transitions.push(Transition { state: prev.sims, action: a, reward: r, next_state: Some(state.sims.clone()) }),
            None => transitions.push(Transition { state: state.sims.clone(), action: a, reward: r, next_state: None }),
        }
    }
    trace.final_delta = d;
    trace.r_outer = trace.reward_sum();
    Ok((trace, transitions))
}

/// Result of one Agent-S step.
#[derive(Debug, Clone)]
pub struct SStep {
    pub partition: usize,
    pub reward: f64,
    pub trace: EpisodeTrace,
    pub r_transitions: Vec<Transition>,
}

/// One outer step: pick a partition from `state`, retrieve its Top-1
/// memory, generate `h₁` and refine the memory with Agent-R. The reward is
/// the inner episode's accumulated reward.
#[allow(clippy::too_many_arguments)]
pub fn agent_s_step<R: Rng + ?Sized>(
    db: &mut PartitionedDatabase,
    env: Env<'_>,
    agent_s: &mut DqnAgent,
    policy_r: &mut RefinePolicy<'_>,
    query: &Query,
    state: &AgentSState,
    x: &str,
    y: &str,
    rng: &mut R,
) -> Result<SStep> {
    let m = act_s(agent_s, state, true)?;
    let Some((memory_id, _)) = query.top1(db, m)? else {
        return Ok(SStep { partition: m, reward: 0.0, trace: EpisodeTrace::empty(m), r_transitions: Vec::new() });
    };
    let mem = db.memory(m, memory_id)?;
    let h0 = env.generator.hypothesis(env.cfg.task, x, &mem.source, &mem.target)?;
    let (trace, r_transitions) = agent_r_episode(db, env, policy_r, m, memory_id, x, y, h0, rng)?;
    trace.check().map_err(Error::Invariant)?;
    Ok(SStep { partition: m, reward: trace.r_outer, trace, r_transitions })
}

/// Everything one training pair produced.
#[derive(Debug, Clone, Default)]
pub struct OuterEpisode {
    pub traces: Vec<EpisodeTrace>,
    pub s_transitions: Vec<Transition>,
    pub r_transitions: Vec<Transition>,
}

impl OuterEpisode {
    pub fn total_reward(&self) -> f64 {
        self.s_transitions.iter().map(|t| t.reward).sum()
    }
}

/// Runs up to `i_max` Agent-S steps on the training pair `(x, y)`,
/// rebuilding the state after each step so refined memories are seen. The
/// pair itself stays fixed.
pub fn agent_s_episode<R: Rng + ?Sized>(
    db: &mut PartitionedDatabase,
    env: Env<'_>,
    agent_s: &mut DqnAgent,
    policy_r: &mut RefinePolicy<'_>,
    x: &str,
    y: &str,
    rng: &mut R,
) -> Result<OuterEpisode> {
    let query = Query::new(env.embedder, x, Some(y))?;
    let mut state = query.state(db)?;
    let mut out = OuterEpisode::default();
    let mut zero_run = 0;
    for i in 0..env.cfg.i_max {
        let step = agent_s_step(db, env, agent_s, policy_r, &query, &state, x, y, rng)?;
        zero_run = if step.reward > 0.0 { 0 } else { zero_run + 1 };
        let last = i + 1 == env.cfg.i_max || zero_run >= env.cfg.zero_reward_stop;
        let next = if last { None } else { Some(query.state(db)?) };
        out.s_transitions.push(Transition {
            state: state.sims.clone(),
            action: step.partition,
            reward: step.reward,
            next_state: next.as_ref().map(|s| s.sims.clone()),
        });
        out.traces.push(step.trace);
        out.r_transitions.extend(step.r_transitions);
        match next {
            Some(s) => state = s,
            None => break,
        }
    }
    Ok(out)
}
