//! Command-line front end: corpus generation, SFT, RL training, evaluation,
//! comparison and plot-data export, each writing a fresh run directory.

mod commands;
pub mod settings;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{ArgAction, Args, Parser, Subcommand};
use serde::Serialize;

pub use commands::{resolve_checkpoint, EVAL_CORPUS, FINAL_CHECKPOINT, METRICS_CSV, METRICS_JSONL, SFT_CHECKPOINT};

#[derive(Debug, Parser)]
#[command(name = "rlfr", version, about = "Reinforcement learning from teacher refinements on a synthetic translation task")]
pub struct Cli {
    /// Log progress (-v info, -vv debug).
    #[arg(short, long, action = ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus directory (task, splits, RL prompt pool, static references).
    GenCorpus(GenCorpusArgs),
    /// Supervised training on the corrupted training split.
    Sft(SftArgs),
    /// RL from refinements (mode rlfr) or from static references (mode fixed-ref).
    Rl(RlArgs),
    /// Evaluate one checkpoint on a corpus.
    Eval(EvalArgs),
    /// Evaluate several checkpoints side by side.
    Compare(CompareArgs),
    /// Export step, reward, response length and adequacy of an RL run.
    PlotData(PlotArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct GenCorpusArgs {
    /// New run directory.
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
    /// Flat TOML file; flags override it.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// substitution-cipher or word-mapping-with-reorder.
    #[arg(long)]
    pub task_kind: Option<String>,
    #[arg(long)]
    pub task_seed: Option<u64>,
    #[arg(long)]
    pub alphabet_size: Option<usize>,
    #[arg(long)]
    pub entity_count: Option<usize>,
    #[arg(long)]
    pub entity_syllables: Option<usize>,
    #[arg(long)]
    pub min_len: Option<usize>,
    #[arg(long)]
    pub max_len: Option<usize>,
    #[arg(long)]
    pub entity_rate: Option<f64>,
    #[arg(long)]
    pub corruption_rate: Option<f64>,
    #[arg(long)]
    pub train_size: Option<usize>,
    #[arg(long)]
    pub dev_size: Option<usize>,
    #[arg(long)]
    pub test_size: Option<usize>,
    #[arg(long)]
    pub pool_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub unlocalized_fraction: Option<f64>,
    #[arg(long)]
    pub swap_rate: Option<f64>,
}

#[derive(Debug, Args, Serialize)]
pub struct SftArgs {
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Corpus directory from gen-corpus.
    #[arg(long)]
    pub corpus: Option<String>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub max_grad_norm: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args, Serialize)]
pub struct RlArgs {
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub corpus: Option<String>,
    /// SFT run directory or checkpoint file.
    #[arg(long)]
    pub init: Option<String>,
    /// rlfr or fixed-ref.
    #[arg(long)]
    pub mode: Option<String>,
    /// oracle, remote or fixed.
    #[arg(long)]
    pub teacher: Option<String>,
    /// lexical, semantic or balanced.
    #[arg(long)]
    pub alpha_preset: Option<String>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub kl_beta: Option<f64>,
    #[arg(long)]
    pub eps_clip: Option<f64>,
    #[arg(long)]
    pub eps_stat: Option<f64>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub max_grad_norm: Option<f64>,
    #[arg(long)]
    pub inner_epochs: Option<usize>,
    #[arg(long)]
    pub temperature: Option<f64>,
    /// token or char.
    #[arg(long)]
    pub edit_unit: Option<String>,
    #[arg(long)]
    pub max_failure_rate: Option<f64>,
    #[arg(long)]
    pub eval_every: Option<usize>,
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Chat-completions URL of the remote teacher.
    #[arg(long)]
    pub endpoint: Option<String>,
    #[arg(long)]
    pub model: Option<String>,
    /// Environment variable that holds the API key.
    #[arg(long)]
    pub api_key_env: Option<String>,
    #[arg(long)]
    pub timeout_secs: Option<f64>,
    #[arg(long)]
    pub max_retries: Option<u32>,
    #[arg(long)]
    pub max_concurrency: Option<usize>,
    #[arg(long)]
    pub backoff_ms: Option<u64>,
    #[arg(long)]
    pub teacher_temperature: Option<f64>,
    /// Refinement cache file shared between runs.
    #[arg(long)]
    pub cache: Option<String>,
    #[arg(long)]
    pub scorer_url: Option<String>,
    #[arg(long)]
    pub scorer_reference_free: Option<bool>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Run directory holding a checkpoint and its evaluation corpus.
    #[arg(long, conflicts_with_all = ["checkpoint", "corpus"])]
    pub run: Option<PathBuf>,
    #[arg(long, requires = "corpus")]
    pub checkpoint: Option<PathBuf>,
    /// JSONL corpus file.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Optional new run directory for eval.json.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// NAME=PATH, where PATH is a checkpoint file or run directory; repeat.
    #[arg(long = "checkpoint", required = true)]
    pub checkpoints: Vec<String>,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    /// RL run directory.
    #[arg(long)]
    pub run: PathBuf,
    /// New directory for plot.csv; standard output when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
}

/// Parses `argv` and runs the subcommand; returns the process exit status.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return 0;
        }
        Err(e) => {
            let msg = e.to_string();
            eprintln!("{}", msg.lines().next().unwrap_or("invalid arguments").trim());
            return 2;
        }
    };
    init_logging(cli.verbose);
    let result = match cli.command {
        Command::GenCorpus(a) => commands::gen_corpus(a),
        Command::Sft(a) => commands::sft(a),
        Command::Rl(a) => commands::rl(a),
        Command::Eval(a) => commands::eval(a),
        Command::Compare(a) => commands::compare(a),
        Command::PlotData(a) => commands::plot_data(a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            let cause: Vec<String> = e.chain().map(|c| c.to_string()).collect();
            eprintln!("error: {}", cause.join(": "));
            1
        }
    }
}
