//! `perfrl`: fine-tune, train, evaluate and apply the execution-feedback
//! optimizer from the command line.
//!
//! Exit codes: 0 success, 1 usage or bad input, 2 unusable environment,
//! 3 internal error. Results go to stdout, logs to stderr.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tracing_subscriber::EnvFilter;

#[derive(Debug, Parser)]
#[command(name = "perfrl", version, about = "Execution-feedback RL for program performance optimization")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,

    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand. Flags override the config file, which
/// overrides built-in defaults.
#[derive(Debug, Clone, Default, Args)]
pub struct GlobalArgs {
    /// TOML run configuration.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// Run directory for checkpoints, statistics and reports.
    #[arg(long, global = true, value_name = "DIR")]
    pub run_dir: Option<PathBuf>,

    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Worker threads for decoding and correctness runs.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,

    /// Per-test-case timeout in seconds.
    #[arg(long, global = true, value_name = "SECS")]
    pub timeout: Option<f64>,

    /// Directive placed before every program in the prompt.
    #[arg(long, global = true, value_name = "TEXT")]
    pub instruction: Option<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Filter the corpus and fine-tune on (slow, fast) pairs.
    Finetune {
        #[arg(long, value_name = "PATH")]
        corpus: Option<PathBuf>,
    },
    /// Run the RL loop on top of a fine-tuned checkpoint.
    Train(commands::TrainArgs),
    /// Decode, execute and score a test corpus.
    Eval {
        #[arg(long, value_name = "PATH")]
        corpus: Option<PathBuf>,
        /// Defaults to the latest checkpoint in the run directory.
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
        /// Where to write report.json and results.jsonl; defaults to <run-dir>/eval.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
        #[command(flatten)]
        scripted: commands::ScriptedModel,
    },
    /// Propose a faster version of one program, verified against its tests.
    Optimize {
        #[arg(long, value_name = "PATH")]
        source: PathBuf,
        /// Unit tests, one `{"input": ..., "expected_output": ...}` record per line.
        #[arg(long, value_name = "PATH")]
        tests: PathBuf,
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
        #[command(flatten)]
        scripted: commands::ScriptedModel,
    },
    /// Report how many tasks have a slow program that passes its own tests.
    CorpusCheck {
        #[arg(long, value_name = "PATH")]
        corpus: Option<PathBuf>,
    },
}

fn init_logging() {
    let filter = EnvFilter::try_from_env("PERFRL_LOG").unwrap_or_else(|_| EnvFilter::new("info"));
    tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .with_target(false)
        .init();
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    init_logging();
    let result = match cli.command {
        Command::Finetune { corpus } => commands::finetune(&cli.global, corpus),
        Command::Train(args) => commands::train(&cli.global, args),
        Command::Eval {
            corpus,
            checkpoint,
            out,
            scripted,
        } => commands::eval(&cli.global, corpus, checkpoint, &scripted, out),
        Command::Optimize {
            source,
            tests,
            checkpoint,
            scripted,
        } => commands::optimize(&cli.global, &source, &tests, checkpoint, &scripted),
        Command::CorpusCheck { corpus } => commands::corpus_check(&cli.global, corpus),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
