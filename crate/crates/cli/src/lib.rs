//! Command-line driver for the synthrank pipeline.

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use synthrank::bm25::Bm25Error;
use synthrank::dataset::{AblationVariant, DatasetError};
use synthrank::rag::RagError;

pub use config::{ConfigError, Mode, PipelineConfig};

#[derive(Debug, Parser)]
#[command(
    name = "synthrank",
    version,
    about = "Synthesize reranker training data, retrieve, rerank and evaluate"
)]
pub struct Cli {
    /// Pipeline config file (TOML).
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Override the config's random seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate, judge and filter training pairs from seed queries.
    Synthesize {
        /// Seed queries JSONL (`id`, `text`).
        #[arg(long)]
        seeds: PathBuf,
    },
    /// Assemble the training mix, SFT file and trainer manifest.
    Build {
        /// Seed-pool pairs JSONL.
        #[arg(long)]
        seed_pool: PathBuf,
        /// Filtered synthesized pairs JSONL.
        #[arg(long)]
        synth: PathBuf,
        #[arg(long)]
        ablation: Option<AblationVariant>,
    },
    /// Build and save a BM25 index.
    Index {
        /// Corpus JSONL (`id`, `text`).
        #[arg(long)]
        corpus: PathBuf,
    },
    /// Retrieve (and optionally rerank) queries and score the run.
    Evaluate {
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Queries JSONL (`id`, `text`).
        #[arg(long)]
        queries: Option<PathBuf>,
        #[arg(long)]
        qrels: PathBuf,
        /// Saved index to use instead of indexing the corpus.
        #[arg(long)]
        index: Option<PathBuf>,
        #[arg(long)]
        mode: Option<Mode>,
        /// Run under the original instructions, for paired scoring.
        #[arg(long, requires = "new_run")]
        og_run: Option<PathBuf>,
        /// Run under the modified instructions.
        #[arg(long, requires = "og_run")]
        new_run: Option<PathBuf>,
    },
    /// Multiple-choice QA with retrieved passages as context.
    Rag {
        #[arg(long)]
        corpus: PathBuf,
        /// Questions JSONL (`id`, `stem`, `options`, `gold`).
        #[arg(long)]
        questions: PathBuf,
        #[arg(long)]
        mode: Option<Mode>,
    },
}

/// Parses arguments and runs the command.
pub fn run_args<I, T>(args: I) -> anyhow::Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args)?;
    run(cli)
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    let path = cli
        .config
        .ok_or_else(|| ConfigError::Invalid("--config PATH is required".into()))?;
    let mut cfg = PipelineConfig::load(&path)?;
    if let Some(seed) = cli.seed {
        cfg.set_seed(seed);
    }
    match cli.command {
        Command::Synthesize { seeds } => commands::synthesize(&cfg, &seeds),
        Command::Build {
            seed_pool,
            synth,
            ablation,
        } => commands::build(&cfg, &seed_pool, &synth, ablation.unwrap_or(cfg.ablation)),
        Command::Index { corpus } => commands::index(&cfg, &corpus),
        Command::Evaluate {
            corpus,
            queries,
            qrels,
            index,
            mode,
            og_run,
            new_run,
        } => commands::evaluate(
            &cfg,
            &commands::EvalInputs {
                corpus,
                queries,
                qrels,
                index,
                mode: mode.unwrap_or(cfg.evaluate.mode),
                paired: og_run.zip(new_run),
            },
        ),
        Command::Rag {
            corpus,
            questions,
            mode,
        } => commands::rag(&cfg, &corpus, &questions, mode.unwrap_or(cfg.rag_mode)),
    }
}

/// 2 for configuration and precondition failures, 1 for anything else.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    if let Some(e) = err.downcast_ref::<clap::Error>() {
        return if e.use_stderr() { 2 } else { 0 };
    }
    let precondition = err.chain().any(|c| {
        c.is::<ConfigError>()
            || matches!(
                c.downcast_ref::<DatasetError>(),
                Some(DatasetError::PoolTooSmall { .. })
            )
            || matches!(
                c.downcast_ref::<RagError>(),
                Some(RagError::EmptyDataset | RagError::Config(_))
            )
            || matches!(c.downcast_ref::<Bm25Error>(), Some(Bm25Error::EmptyCorpus))
    });
    if precondition {
        2
    } else {
        1
    }
}
