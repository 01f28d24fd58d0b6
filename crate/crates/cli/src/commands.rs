use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::json;

use mrag_core::corpus::{load_dataset, split_indices, Dataset, SplitSpec};
use mrag_core::embed::{Embedder, EmbedderConfig};
use mrag_core::generator::{Generator, GeneratorConfig, HttpBackend, HttpBackendConfig, MockBackend};
use mrag_core::index::{build_partitioned_db, EmbeddedPool, HnswParams, PartitionedDatabase};
use mrag_core::metrics::Metric;
use mrag_core::partition::{assign_partitions, PartitionSpec, Strategy};
use mrag_core::pipeline::{build_planted, evaluate, infer, PlantedConfig, TrainConfig, Trainer};
use mrag_core::rl::DqnConfig;

use crate::config::{BackendKind, ConfigError, Settings};
use crate::Command;

const EMBEDDER_FILE: &str = "embedder.json";

pub fn run(command: Command, s: &Settings) -> Result<()> {
    match command {
        Command::Ingest { input, out } => ingest(s, &input, &out),
        Command::Partition { pool, out } => partition(s, &pool, &out),
        Command::Planted { out, planted, per_partition } => planted_env(s, &out, planted, per_partition),
        Command::Train { db, train, dev, out, resume, traces } => train_cmd(s, &db, &train, dev.as_deref(), &out, resume, traces.as_deref()),
        Command::Infer { checkpoint, queries, out } => infer_cmd(s, &checkpoint, &queries, &out),
        Command::Eval { checkpoint, test, out } => eval(s, &checkpoint, &test, out.as_deref()),
        Command::BenchPartition { pool, train, dev, out } => bench_partition(s, &pool, train.as_deref().zip(dev.as_deref()), out.as_deref()),
    }
}

fn print_json(value: &serde_json::Value) -> Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    fs::write(path, serde_json::to_vec_pretty(value)?).with_context(|| format!("writing {}", path.display()))
}

fn embedder_config(s: &Settings) -> EmbedderConfig {
    match s.embed_backend {
        BackendKind::Mock => EmbedderConfig::Hash { dimension: s.embed_dimension, seed: s.embed_seed },
        BackendKind::Http => EmbedderConfig::Http {
            endpoint: s.embed_endpoint.clone(),
            dimension: s.embed_dimension,
            timeout_secs: s.timeout_secs,
            retries: s.retries,
        },
    }
}

/// The embedder a database was built with, stored next to it.
fn load_embedder(db_dir: &Path) -> Result<Embedder> {
    let path = db_dir.join(EMBEDDER_FILE);
    if !path.is_file() {
        return Err(mrag_core::Error::FileNotFound(path).into());
    }
    let cfg: EmbedderConfig = serde_json::from_slice(&fs::read(&path)?).with_context(|| format!("reading {}", path.display()))?;
    Ok(Embedder::new(&cfg)?)
}

fn generator(s: &Settings) -> Result<Generator> {
    let cfg = GeneratorConfig { max_tokens: s.max_tokens, candidate_temperature: s.candidate_temperature, ..GeneratorConfig::default() };
    let gen = match s.backend {
        BackendKind::Mock => Generator::new(Arc::new(MockBackend::new()), cfg),
        BackendKind::Http => {
            let mut http = HttpBackendConfig::new(s.endpoint.clone(), s.model.clone());
            http.timeout = Duration::from_secs(s.timeout_secs);
            http.retries = s.retries;
            Generator::new(Arc::new(HttpBackend::new(http)?), cfg)
        }
    };
    Ok(match &s.cache_dir {
        Some(dir) => gen.with_cache_dir(dir)?,
        None => gen,
    })
}

fn hnsw_params(s: &Settings) -> HnswParams {
    HnswParams::new(s.max_connections, s.ef_construction, s.ef_search, s.seed)
}

fn partition_spec(s: &Settings) -> Result<PartitionSpec> {
    let mut spec = PartitionSpec::for_task(s.task, s.seed);
    if let Some(strategy) = s.single_strategy()? {
        spec.strategy = strategy;
    }
    if let Some(m) = s.single_m()? {
        spec.m = m;
    }
    Ok(spec)
}

fn train_config(s: &Settings) -> TrainConfig {
    let mut cfg = TrainConfig {
        max_episodes: s.max_episodes,
        eval_every: s.eval_every,
        patience: s.patience,
        dev_slice: s.dev_slice,
        refine: s.refine,
        seed: s.seed,
        dqn: DqnConfig {
            gamma: s.gamma,
            learning_rate: s.learning_rate,
            batch_size: s.batch_size,
            epsilon_start: s.epsilon_start,
            epsilon_end: s.epsilon_end,
            epsilon_decay_steps: s.epsilon_decay_steps,
            replay_capacity: s.replay_capacity,
            seed: s.seed,
        },
        ..TrainConfig::default()
    };
    cfg.agent.task = s.task;
    cfg.agent.metric = Metric::new(s.metric);
    cfg.agent.k = s.k;
    cfg.agent.i_max = s.i_max;
    cfg.agent.j_max = s.j_max;
    cfg
}

fn save_db(db: &PartitionedDatabase, embedder_cfg: &EmbedderConfig, dir: &Path) -> Result<()> {
    db.save(dir)?;
    write_json(&dir.join(EMBEDDER_FILE), embedder_cfg)
}

fn ingest(s: &Settings, input: &Path, out: &Path) -> Result<()> {
    let ds = load_dataset(input, s.task)?;
    let spec = SplitSpec { train_fraction: s.train_fraction, seed: s.seed, dev_count: s.dev_count };
    let idx = split_indices(ds.len(), &spec)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let files = [("train", &idx.train), ("memory_pool", &idx.memory_pool), ("dev", &idx.dev)];
    for (name, indices) in files {
        ds.select(indices).write_jsonl(&out.join(format!("{name}.jsonl")))?;
    }
    let manifest = json!({
        "input": input.display().to_string(),
        "task": s.task.name(),
        "records": ds.len(),
        "split": spec,
        "counts": { "train": idx.train.len(), "memory_pool": idx.memory_pool.len(), "dev": idx.dev.len() },
        "indices": idx,
    });
    write_json(&out.join("manifest.json"), &manifest)?;
    print_json(&json!({ "out": out.display().to_string(), "counts": manifest["counts"] }))
}

fn partition(s: &Settings, pool_path: &Path, out: &Path) -> Result<()> {
    let pool = load_dataset(pool_path, s.task)?;
    let spec = partition_spec(s)?;
    let embedder_cfg = embedder_config(s);
    let pool = EmbeddedPool::new(pool, &Embedder::new(&embedder_cfg)?)?;
    let params = hnsw_params(s);
    let assignment = assign_partitions(&pool.pool.pairs, &pool.pair_embeddings, &spec, &params)?;
    for w in &assignment.warnings {
        log::warn!("{w}");
    }
    let db = build_partitioned_db(&pool, &assignment, spec, params)?;
    save_db(&db, &embedder_cfg, out)?;
    print_json(&json!({
        "out": out.display().to_string(),
        "strategy": spec.strategy.name(),
        "m": spec.m,
        "sizes": assignment.sizes(),
        "build_ms": db.build_times().iter().map(|d| d.as_secs_f64() * 1e3).collect::<Vec<_>>(),
        "warnings": assignment.warnings,
    }))
}

fn planted_env(s: &Settings, out: &Path, planted: Option<usize>, per_partition: usize) -> Result<()> {
    let m = s.single_m()?.unwrap_or(4);
    let cfg = PlantedConfig::new(m, planted.unwrap_or(m.saturating_sub(1)), per_partition, s.seed);
    let env = build_planted(&cfg)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    env.train.write_jsonl(&out.join("train.jsonl"))?;
    env.dev.write_jsonl(&out.join("dev.jsonl"))?;
    env.test.write_jsonl(&out.join("test.jsonl"))?;
    env.pool.pool.write_jsonl(&out.join("memory_pool.jsonl"))?;
    let embedder_cfg = EmbedderConfig::Hash { dimension: cfg.dimension, seed: cfg.seed };
    save_db(&env.db, &embedder_cfg, &out.join("db"))?;
    let info = json!({
        "out": out.display().to_string(),
        "m": cfg.m,
        "planted": cfg.planted,
        "per_partition": cfg.n_per_partition,
        "seed": cfg.seed,
        "counts": { "train": env.train.len(), "dev": env.dev.len(), "test": env.test.len(), "memory_pool": env.pool.len() },
    });
    write_json(&out.join("planted.json"), &info)?;
    print_json(&info)
}

fn train_cmd(s: &Settings, db_dir: &Path, train_path: &Path, dev_path: Option<&Path>, out: &Path, resume: bool, traces: Option<&Path>) -> Result<()> {
    let embedder_cfg: EmbedderConfig = {
        let path = db_dir.join(EMBEDDER_FILE);
        if !path.is_file() {
            return Err(mrag_core::Error::FileNotFound(path).into());
        }
        serde_json::from_slice(&fs::read(&path)?)?
    };
    let embedder = Embedder::new(&embedder_cfg)?;
    let gen = generator(s)?;

    let (mut trainer, mut db) = if resume && out.join("trainer.json").is_file() {
        let (mut t, db) = Trainer::load_checkpoint(out)?;
        log::info!("resuming from episode {}", t.episodes);
        t.cfg.max_episodes = s.max_episodes;
        (t, db)
    } else {
        let db = PartitionedDatabase::load(db_dir)?;
        (Trainer::new(train_config(s), db.m())?, db)
    };
    let task = trainer.cfg.agent.task;
    let train_set = load_dataset(train_path, task)?;
    let dev_set = match dev_path {
        Some(p) => load_dataset(p, task)?,
        None => Dataset::new(task, Vec::new()),
    };

    let mut totals = mrag_core::pipeline::TrainSummary::default();
    loop {
        let until = trainer.episodes + trainer.cfg.eval_every;
        let chunk = trainer.train_until(&mut db, &embedder, &gen, &train_set, &dev_set, traces, until)?;
        totals.episodes += chunk.episodes;
        totals.outer_steps += chunk.outer_steps;
        totals.inner_steps += chunk.inner_steps;
        totals.total_reward += chunk.total_reward;
        totals.commits += chunk.commits;
        totals.early_stopped |= chunk.early_stopped;
        trainer.save_checkpoint(out, &db)?;
        write_json(&out.join("db").join(EMBEDDER_FILE), &embedder_cfg)?;
        if chunk.episodes == 0 || trainer.stopped || trainer.episodes >= trainer.cfg.max_episodes {
            break;
        }
    }
    print_json(&json!({
        "checkpoint": out.display().to_string(),
        "episodes": trainer.episodes,
        "this_run": totals,
        "history": trainer.history,
        "stopped_early": trainer.stopped,
    }))
}

#[derive(Deserialize)]
struct QueryLine {
    source: String,
}

#[derive(Serialize)]
struct HypothesisLine<'a> {
    source: &'a str,
    hypothesis: String,
    partition: usize,
    memory: Option<usize>,
}

fn load_queries(path: &Path) -> Result<Vec<String>> {
    if !path.is_file() {
        return Err(mrag_core::Error::FileNotFound(path.to_path_buf()).into());
    }
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let q: QueryLine = serde_json::from_str(line).map_err(|e| mrag_core::Error::MalformedRecord { line: i + 1, reason: e.to_string() })?;
        out.push(q.source);
    }
    Ok(out)
}

fn load_checkpoint(dir: &Path) -> Result<(Trainer, PartitionedDatabase, Embedder)> {
    let (trainer, db) = Trainer::load_checkpoint(dir)?;
    let embedder = load_embedder(&dir.join("db"))?;
    Ok((trainer, db, embedder))
}

fn infer_cmd(s: &Settings, checkpoint: &Path, queries: &Path, out: &Path) -> Result<()> {
    let queries = load_queries(queries)?;
    let (trainer, db, embedder) = load_checkpoint(checkpoint)?;
    let gen = generator(s)?;
    let task = trainer.cfg.agent.task;
    let mut w = std::io::BufWriter::new(fs::File::create(out).with_context(|| format!("creating {}", out.display()))?);
    for q in &queries {
        let r = infer(&db, &embedder, &gen, &trainer.agent_s, task, q)?;
        let line = HypothesisLine { source: q, hypothesis: r.hypothesis, partition: r.partition, memory: r.memory };
        serde_json::to_writer(&mut w, &line)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    print_json(&json!({ "out": out.display().to_string(), "queries": queries.len() }))
}

fn eval(s: &Settings, checkpoint: &Path, test_path: &Path, out: Option<&Path>) -> Result<()> {
    let (trainer, db, embedder) = load_checkpoint(checkpoint)?;
    let test = load_dataset(test_path, trainer.cfg.agent.task)?;
    let report = evaluate(&db, &embedder, &generator(s)?, &trainer.agent_s, &test, &s.eval_metrics)?;
    let summary = json!({
        "examples": report.examples.len(),
        "aggregates": report.aggregates,
        "partition_counts": report.partition_counts,
        "timings": report.timings,
    });
    match out {
        Some(path) => {
            fs::write(path, report.to_csv()).with_context(|| format!("writing {}", path.display()))?;
            print_json(&summary)
        }
        None => {
            print!("{}", report.to_csv());
            eprintln!("{summary}");
            Ok(())
        }
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

struct BenchRow {
    sizes: Vec<usize>,
    build_ms: f64,
    score: Option<f64>,
}

fn bench_one(s: &Settings, pool: &EmbeddedPool, spec: PartitionSpec, pipeline: Option<(&Dataset, &Dataset)>, embedder: &Embedder, gen: &Generator) -> mrag_core::Result<BenchRow> {
    let params = hnsw_params(s);
    let assignment = assign_partitions(&pool.pool.pairs, &pool.pair_embeddings, &spec, &params)?;
    let mut db = build_partitioned_db(pool, &assignment, spec, params)?;
    let build_ms = db.build_times().iter().map(Duration::as_secs_f64).sum::<f64>() * 1e3;
    let score = match pipeline {
        Some((train, dev)) => {
            let mut trainer = Trainer::new(train_config(s), db.m())?;
            trainer.train(&mut db, embedder, gen, train, dev, None)?;
            let report = evaluate(&db, embedder, gen, &trainer.agent_s, dev, &[s.metric])?;
            report.aggregate(s.metric)
        }
        None => None,
    };
    Ok(BenchRow { sizes: assignment.sizes(), build_ms, score })
}

fn bench_partition(s: &Settings, pool_path: &Path, pipeline: Option<(&Path, &Path)>, out: Option<&Path>) -> Result<()> {
    let embedder_cfg = embedder_config(s);
    let embedder = Embedder::new(&embedder_cfg)?;
    let pool = EmbeddedPool::new(load_dataset(pool_path, s.task)?, &embedder)?;
    let sets = match pipeline {
        Some((t, d)) => Some((load_dataset(t, s.task)?, load_dataset(d, s.task)?)),
        None => None,
    };
    let gen = generator(s)?;
    let strategies = s.strategies.clone().unwrap_or_else(|| Strategy::ALL.to_vec());
    let ms = s.m.clone().ok_or_else(|| ConfigError("bench-partition needs --m (for example 1,2,3,4,5)".into()))?;

    let mut csv = format!("strategy,m,status,partition_sizes,build_ms,{}_score,message\n", s.metric.name());
    for strategy in strategies {
        for &m in &ms {
            let spec = PartitionSpec::new(strategy, m, s.seed);
            let row = match bench_one(s, &pool, spec, sets.as_ref().map(|(t, d)| (t, d)), &embedder, &gen) {
                Ok(r) => {
                    let sizes: Vec<String> = r.sizes.iter().map(usize::to_string).collect();
                    let score = r.score.map(|v| format!("{v:.6}")).unwrap_or_default();
                    format!("{strategy},{m},ok,{},{:.3},{score},", sizes.join(";"), r.build_ms)
                }
                Err(e) => {
                    log::warn!("{strategy} M={m}: {e}");
                    format!("{strategy},{m},{},,,,{}", e.kind(), csv_field(&e.to_string()))
                }
            };
            csv.push_str(&row);
            csv.push('\n');
        }
    }
    match out {
        Some(path) => fs::write(path, &csv).with_context(|| format!("writing {}", path.display()))?,
        None => print!("{csv}"),
    }
    Ok(())
}
