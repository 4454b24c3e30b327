mod commands;
mod config;

use std::panic::{self, AssertUnwindSafe};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{Overrides, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "cares", version, about = "Graph neural session-based recommendation")]
struct Cli {
    /// JSON file with flat configuration keys; flags take precedence
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output path (directory for preprocess, file otherwise; stdout when omitted where allowed)
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Turn a raw click log into train/test samples and a vocabulary
    Preprocess {
        #[arg(long)]
        input: PathBuf,
    },
    /// Build the cross-session item graph from a dataset
    BuildGraph {
        #[arg(long)]
        data: PathBuf,
    },
    /// Train a model and write a checkpoint; prints one JSON line per epoch
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        graph: PathBuf,
        /// Continue from this checkpoint
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Also append epoch lines to this file
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Rank the catalog for every test case and report P@20 and MRR@20
    Evaluate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Write per-case ranks as TSV
        #[arg(long)]
        ranks: Option<PathBuf>,
    },
    /// Top-k next items for a session read from stdin
    Recommend {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 20)]
        k: usize,
    },
    /// Dump a graph file as JSON
    InspectGraph {
        #[arg(long)]
        graph: PathBuf,
        /// Dataset directory used to print item and category keys
        #[arg(long)]
        data: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let cfg = RunConfig::load(cli.config.as_deref(), &cli.overrides)?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.worker_threads())
        .build_global()
        .ok();
    let out = cli.out.as_deref();
    match cli.command {
        Command::Preprocess { input } => commands::preprocess(&cfg, &input, out),
        Command::BuildGraph { data } => commands::build_graph(&cfg, &data, out),
        Command::Train { data, graph, resume, log } => {
            commands::train(&cfg, &data, &graph, resume.as_deref(), log.as_deref(), out)
        }
        Command::Evaluate { data, graph, checkpoint, ranks } => {
            commands::evaluate(&cfg, &data, &graph, &checkpoint, ranks.as_deref(), out)
        }
        Command::Recommend { data, graph, checkpoint, k } => {
            commands::recommend(&data, &graph, &checkpoint, k, out)
        }
        Command::InspectGraph { graph, data } => commands::inspect_graph(&graph, data.as_deref(), out),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let internal = err
        .chain()
        .filter_map(|e| e.downcast_ref::<cares::Error>())
        .any(cares::Error::is_internal);
    if internal {
        3
    } else {
        2
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match panic::catch_unwind(AssertUnwindSafe(|| run(cli))) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
        // The panic hook has already printed the message.
        Err(_) => ExitCode::from(3),
    }
}
