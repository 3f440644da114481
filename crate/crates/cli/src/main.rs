//! `redraft` — curate writing queries, generate rubrics, synthesize
//! reflection-enriched trajectories, and serve gated rewards.

use std::path::PathBuf;
use std::sync::Arc;

use anyhow::{bail, Result};
use clap::{Parser, Subcommand};

use redraft_cli::commands::{self, StageOutcome};
use redraft_cli::config::{load_config, LoadedConfig};
use redraft_cli::jsonl::RunMeta;
use redraft_cli::serve::{serve, ServeState};

#[derive(Parser)]
#[command(
    name = "redraft",
    version,
    about = "Reflective writing data synthesis and reward pipeline"
)]
struct Cli {
    /// Pipeline config file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override reward.seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Override both backends' in-flight window and the batch width.
    #[arg(long, global = true)]
    max_in_flight: Option<usize>,

    /// Continue from existing checkpoints and outputs.
    #[arg(long, global = true)]
    resume: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Filter, deduplicate, truncate, and optionally difficulty-rank the
    /// input corpus.
    Curate {
        /// Difficulty records (JSONL) for gap-based selection.
        #[arg(long)]
        difficulty: Option<PathBuf>,
        /// Keep only the k queries with the largest gaps.
        #[arg(long)]
        top_k: Option<usize>,
    },
    /// Generate key-point rubrics and quality criteria per curated query.
    Rubrics,
    /// Run the writer-judge loop over the curated corpus.
    Synthesize {
        /// Process at most this many pending items, then stop.
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Score samples: JSONL batch mode or the HTTP service.
    Reward {
        /// Batch input file of reward requests.
        #[arg(long)]
        batch: Option<PathBuf>,
        /// Run the HTTP service instead of a batch.
        #[arg(long)]
        serve: bool,
        /// Bind address for --serve.
        #[arg(long, default_value = "127.0.0.1:8077")]
        addr: String,
    },
    /// Score reflection quality of model outputs on a benchmark file.
    Bench {
        #[arg(long)]
        input: PathBuf,
    },
    /// Classify thinking patterns (and optionally revision types) in traces.
    Patterns {
        #[arg(long)]
        input: PathBuf,
        /// Also classify RA/FLC/QE revision types (rubrics traces only).
        #[arg(long)]
        revisions: bool,
    },
}

#[tokio::main]
async fn main() {
    let cli = Cli::parse();
    match run(cli).await {
        Ok(outcome) => {
            println!("{}", outcome.summary);
            if outcome.item_errors > 0 {
                eprintln!("{} item error(s)", outcome.item_errors);
                std::process::exit(1);
            }
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::exit(1);
        }
    }
}

async fn run(cli: Cli) -> Result<StageOutcome> {
    let Some(config_path) = &cli.config else {
        bail!("--config is required");
    };
    let mut loaded: LoadedConfig = load_config(config_path)?;
    if let Some(seed) = cli.seed {
        loaded.config.reward.seed = seed;
    }
    if let Some(width) = cli.max_in_flight {
        if width == 0 {
            bail!("--max-in-flight must be at least 1");
        }
        loaded.config.backend.writer.max_in_flight = width;
        loaded.config.backend.judge.max_in_flight = width;
    }
    let meta = RunMeta::new(loaded.config.semantic_checksum());

    match cli.command {
        Command::Curate { difficulty, top_k } => {
            commands::curate::run(&loaded, &meta, difficulty, top_k)
        }
        Command::Rubrics => commands::rubrics::run(&loaded, &meta, cli.resume).await,
        Command::Synthesize { limit } => {
            commands::synthesize::run(&loaded, &meta, cli.resume, limit).await
        }
        Command::Reward {
            batch,
            serve: serve_mode,
            addr,
        } => match (batch, serve_mode) {
            (Some(batch), false) => {
                commands::reward::run_batch(&loaded, &meta, cli.resume, &batch).await
            }
            (None, true) => {
                let state = Arc::new(ServeState {
                    backend: loaded.build_backend()?,
                    reward_config: loaded.config.reward_config(),
                    meta,
                });
                serve(&addr, state).await?;
                Ok(StageOutcome::new(0, 0, "reward service stopped"))
            }
            (Some(_), true) => bail!("choose one of --batch or --serve"),
            (None, false) => bail!("reward needs --batch FILE or --serve"),
        },
        Command::Bench { input } => commands::bench::run(&loaded, &meta, cli.resume, &input).await,
        Command::Patterns { input, revisions } => {
            commands::patterns::run(&loaded, &meta, cli.resume, &input, revisions).await
        }
    }
}
