//! `pagerag`: page-level retrieval-augmented QA pipeline and benchmark
//! harness. Exit codes: 0 success, 1 usage, 2 config, 3 runtime.

mod artifacts;
mod commands;
mod config;
mod error;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use pagerag_core::EmbedderBackend;

use commands::RetrieverArg;
use config::{LlmBackendKind, RunConfig};
use error::{CliError, CliResult};

#[derive(Parser)]
#[command(
    name = "pagerag",
    version,
    about = "Page-level RAG retrieval and QA benchmark harness",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum BackendArg {
    /// Remote embeddings and chat services.
    Remote,
    /// Deterministic mock chat backend.
    Mock,
    /// Deterministic hashed bag-of-words embedder.
    LocalHash,
}

#[derive(Args)]
struct CommonOpts {
    /// Run configuration file (TOML).
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Output directory override.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Backend override: local-hash switches the embedder, mock switches
    /// the chat LLM, remote switches both.
    #[arg(long, value_enum)]
    backend: Option<BackendArg>,
    /// Accuracy cutoffs, comma-separated (e.g. 1,3,5,10).
    #[arg(long, value_name = "LIST", value_delimiter = ',')]
    k: Option<Vec<usize>>,
    /// Worker thread cap (default: available processors).
    #[arg(long, value_name = "N")]
    jobs: Option<usize>,
    /// Seed for stochastic choices in local backends.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Load, filter, and validate the corpus; write the corpus artifact.
    Ingest {
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Embed pages into a vector index, or build the knowledge graph.
    BuildIndex {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long, value_enum, default_value = "vector")]
        retriever: RetrieverArg,
    },
    /// Generate the one-question-per-page gold dataset.
    GenDataset {
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Retrieve pages for one question.
    Retrieve {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long, value_name = "TEXT")]
        question: String,
        #[arg(long, value_enum, default_value = "vector")]
        retriever: RetrieverArg,
    },
    /// Retrieve context and generate an answer for one question.
    Answer {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long, value_name = "TEXT")]
        question: String,
        #[arg(long, value_enum, default_value = "vector")]
        retriever: RetrieverArg,
        /// Re-rank retrieved pages with the chat LLM before answering.
        #[arg(long)]
        rerank: bool,
    },
    /// Re-rank the retrieved pages for one question and show the outcome.
    Rerank {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long, value_name = "TEXT")]
        question: String,
    },
    /// Run the full evaluation and write a structured report.
    Evaluate {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long, value_enum, default_value = "vector")]
        retriever: RetrieverArg,
        /// Insert LLM re-ranking between retrieval and scoring.
        #[arg(long)]
        rerank: bool,
    },
    /// Render structured report files as comparison tables.
    Report {
        /// Report files to combine (must share one corpus).
        #[arg(value_name = "REPORT", required = true)]
        files: Vec<PathBuf>,
    },
}

fn resolve_config(common: &CommonOpts) -> CliResult<RunConfig> {
    let mut config = RunConfig::load(&common.config)?;
    if let Some(out) = &common.out {
        config.out_dir = out.clone();
    }
    if let Some(jobs) = common.jobs {
        config.jobs = Some(jobs);
    }
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    if let Some(ks) = &common.k {
        config.k_values = ks.clone();
        config
            .validate()
            .map_err(|e| CliError::Usage(format!("--k: {e}")))?;
    }
    match common.backend {
        Some(BackendArg::LocalHash) => config.embedder.backend = EmbedderBackend::LocalHash,
        Some(BackendArg::Mock) => {
            config.llm.backend = LlmBackendKind::Mock;
            if let Some(dataset_llm) = config.llm_dataset.as_mut() {
                dataset_llm.backend = LlmBackendKind::Mock;
            }
        }
        Some(BackendArg::Remote) => {
            config.embedder.backend = EmbedderBackend::Remote;
            config.llm.backend = LlmBackendKind::Remote;
            if let Some(dataset_llm) = config.llm_dataset.as_mut() {
                dataset_llm.backend = LlmBackendKind::Remote;
            }
        }
        None => {}
    }
    if let Some(jobs) = config.jobs {
        // Ignore a second initialization (only possible in tests).
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global();
    }
    Ok(config)
}

fn dispatch(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Ingest { common } => commands::ingest(&resolve_config(&common)?),
        Command::BuildIndex { common, retriever } => {
            commands::build_index(&resolve_config(&common)?, retriever)
        }
        Command::GenDataset { common } => commands::gen_dataset(&resolve_config(&common)?),
        Command::Retrieve {
            common,
            question,
            retriever,
        } => commands::retrieve(&resolve_config(&common)?, &question, retriever),
        Command::Answer {
            common,
            question,
            retriever,
            rerank,
        } => commands::answer(&resolve_config(&common)?, &question, retriever, rerank),
        Command::Rerank { common, question } => {
            commands::rerank_command(&resolve_config(&common)?, &question)
        }
        Command::Evaluate {
            common,
            retriever,
            rerank,
        } => commands::evaluate(&resolve_config(&common)?, retriever, rerank),
        Command::Report { files } => commands::report(&files),
    }
}

fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("pagerag: {e}");
            e.exit_code()
        }
    }
}

/// Die quietly when stdout's reader goes away (`pagerag report | head`),
/// like any other table-printing tool.
#[cfg(unix)]
fn reset_sigpipe() {
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
}

#[cfg(not(unix))]
fn reset_sigpipe() {}

fn main() {
    reset_sigpipe();
    std::process::exit(run());
}
