mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{ConfigError, Settings};

#[derive(Parser, Debug)]
#[command(name = "mrag", version, about = "Multi-partition retrieval-augmented generation")]
struct Cli {
    #[command(flatten)]
    common: CommonFlags,
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand. Each overrides the config key of the
/// same name.
#[derive(Args, Debug, Default)]
struct CommonFlags {
    /// Key-value settings file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    log_level: Option<String>,
    #[arg(long, global = true)]
    seed: Option<String>,
    /// summarization, translation or dialogue.
    #[arg(long, global = true)]
    task: Option<String>,
    /// Partitioning strategy; a comma-separated list for bench-partition.
    #[arg(long, global = true)]
    strategy: Option<String>,
    /// Number of partitions; a comma-separated list for bench-partition.
    #[arg(long, global = true)]
    m: Option<String>,
    /// Candidate pool size.
    #[arg(long, global = true)]
    k: Option<String>,
    /// Reward metric.
    #[arg(long, global = true)]
    metric: Option<String>,
    /// Generation backend: mock or http.
    #[arg(long, global = true)]
    backend: Option<String>,
    #[arg(long, global = true)]
    endpoint: Option<String>,
    #[arg(long, global = true)]
    model: Option<String>,
    #[arg(long, global = true)]
    cache_dir: Option<String>,
    #[arg(long, global = true)]
    max_episodes: Option<String>,
}

impl CommonFlags {
    fn apply(&self, settings: &mut Settings) -> Result<(), ConfigError> {
        let flags = [
            ("log_level", &self.log_level),
            ("seed", &self.seed),
            ("task", &self.task),
            ("strategy", &self.strategy),
            ("m", &self.m),
            ("k", &self.k),
            ("metric", &self.metric),
            ("backend", &self.backend),
            ("endpoint", &self.endpoint),
            ("model", &self.model),
            ("cache_dir", &self.cache_dir),
            ("max_episodes", &self.max_episodes),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                settings.set(key, v).map_err(|e| ConfigError(format!("--{}: {e}", key.replace('_', "-"))))?;
            }
        }
        Ok(())
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Validate a JSONL corpus and split it into train, memory pool and dev.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Embed a memory pool, partition it and build the indexed database.
    Partition {
        #[arg(long)]
        pool: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a synthetic corpus with one useful partition, plus its database.
    Planted {
        #[arg(long)]
        out: PathBuf,
        /// Index of the useful partition; defaults to the last one.
        #[arg(long)]
        planted: Option<usize>,
        /// Memories per partition.
        #[arg(long, default_value_t = 40)]
        per_partition: usize,
    },
    /// Train the partition selector and memory refiner.
    Train {
        #[arg(long)]
        db: PathBuf,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        dev: Option<PathBuf>,
        /// Checkpoint directory.
        #[arg(long)]
        out: PathBuf,
        /// Continue from the checkpoint in --out when one exists.
        #[arg(long)]
        resume: bool,
        /// Append per-episode traces to this JSONL file.
        #[arg(long)]
        traces: Option<PathBuf>,
    },
    /// Generate one hypothesis per query.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a trained checkpoint on a labelled set.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        test: PathBuf,
        /// Per-example CSV; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sweep strategies and partition counts over one pool.
    BenchPartition {
        #[arg(long)]
        pool: PathBuf,
        /// With --dev, train on each database and report a dev score.
        #[arg(long, requires = "dev")]
        train: Option<PathBuf>,
        #[arg(long, requires = "train")]
        dev: Option<PathBuf>,
        /// CSV output; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Ingest { .. } => "ingest",
            Command::Partition { .. } => "partition",
            Command::Planted { .. } => "planted",
            Command::Train { .. } => "train",
            Command::Infer { .. } => "infer",
            Command::Eval { .. } => "eval",
            Command::BenchPartition { .. } => "bench-partition",
        }
    }
}

fn report(kind: &str, message: &str, code: u8) -> ExitCode {
    let err = serde_json::json!({ "error": { "kind": kind, "message": message, "exit_code": code } });
    eprintln!("{err}");
    ExitCode::from(code)
}

fn classify(err: &anyhow::Error) -> (&'static str, u8) {
    for cause in err.chain() {
        if cause.downcast_ref::<ConfigError>().is_some() {
            return ("config", 2);
        }
        if let Some(e) = cause.downcast_ref::<mrag_core::Error>() {
            return (e.kind(), if e.is_usage() { 2 } else { 1 });
        }
    }
    ("runtime", 1)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return report("usage", e.render().to_string().trim(), 2),
    };
    let settings = config::load_settings(cli.common.config.as_deref(), cli.command.name())
        .and_then(|mut s| cli.common.apply(&mut s).map(|_| s));
    let settings = match settings {
        Ok(s) => s,
        Err(e) => return report("config", &e.0, 2),
    };
    env_logger::Builder::new().parse_filters(&settings.log_level).format_timestamp(None).init();

    match commands::run(cli.command, &settings) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let (kind, code) = classify(&err);
            report(kind, &format!("{err:#}"), code)
        }
    }
}
