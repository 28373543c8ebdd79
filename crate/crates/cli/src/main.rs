//! Command line driver for the depgraph-rec pipeline.

mod commands;
mod error;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use depgraph_rec::datagen::ChallengeKind;

/// Environment variable capping the worker count; 1 is the deterministic mode.
pub const THREADS_ENV: &str = "DEPGRAPH_REC_THREADS";

#[derive(Debug, Parser)]
#[command(name = "depgraph-rec", version, about = "API recommendation from program dependence paths")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub config: ConfigArgs,
}

/// Run configuration. Values come from the defaults, then `--config`, then
/// these flags.
#[derive(Debug, Args)]
#[command(next_help_heading = "Configuration")]
pub struct ConfigArgs {
    /// Config file of `key = value` lines
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Embedding dimension [default: 300]
    #[arg(long, global = true, value_name = "N")]
    pub dim: Option<String>,
    /// Skip-gram context window [default: 5]
    #[arg(long, global = true, value_name = "N")]
    pub window: Option<String>,
    /// Negative samples per pair [default: 100]
    #[arg(long, global = true, value_name = "N")]
    pub negatives: Option<String>,
    /// Mini-batch size [default: 1024]
    #[arg(long, global = true, value_name = "N")]
    pub batch: Option<String>,
    /// Training epochs [default: 10]
    #[arg(long, global = true, value_name = "N")]
    pub epochs: Option<String>,
    /// Model learning rate [default: 0.001]
    #[arg(long, global = true, value_name = "X")]
    pub lr: Option<String>,
    /// Hybrid loss weight of the token-level head [default: 0.5]
    #[arg(long, global = true, value_name = "X")]
    pub alpha: Option<String>,
    /// Paths selected per graph [default: 5]
    #[arg(long, global = true, value_name = "N")]
    pub budget: Option<String>,
    /// Maximum tokens per path [default: 10]
    #[arg(long, global = true, value_name = "N")]
    pub max_len: Option<String>,
    /// Maximum inlining depth while slicing [default: 10]
    #[arg(long, global = true, value_name = "N")]
    pub max_call_depth: Option<String>,
    /// Skip-gram learning rate [default: 0.025]
    #[arg(long, global = true, value_name = "X")]
    pub embed_lr: Option<String>,
    /// Skip-gram token subsampling threshold, 0 disables [default: 0.001]
    #[arg(long, global = true, value_name = "X")]
    pub subsample: Option<String>,
    /// LSTM hidden size [default: 128]
    #[arg(long, global = true, value_name = "N")]
    pub hidden: Option<String>,
    /// LSTM layers [default: 2]
    #[arg(long, global = true, value_name = "N")]
    pub layers: Option<String>,
    /// hybrid, token_level or sequence_level [default: hybrid]
    #[arg(long, global = true, value_name = "MODE")]
    pub loss_mode: Option<String>,
    /// Path-set pooling: hidden or probability [default: hidden]
    #[arg(long, global = true, value_name = "MODE")]
    pub pooling: Option<String>,
    /// adam or sgd [default: adam]
    #[arg(long, global = true, value_name = "NAME")]
    pub optimizer: Option<String>,
    /// Global gradient-norm clip [default: 5]
    #[arg(long, global = true, value_name = "X")]
    pub clip_norm: Option<String>,
    /// Minimum count of an API token [default: 5]
    #[arg(long, global = true, value_name = "N")]
    pub api_min_freq: Option<String>,
    /// Minimum count of a constant token [default: 100]
    #[arg(long, global = true, value_name = "N")]
    pub const_min_freq: Option<String>,
    /// Training fraction of the grouped split [default: 0.8]
    #[arg(long, global = true, value_name = "X")]
    pub train_frac: Option<String>,
    /// Cap on enumerated paths per graph [default: 1000]
    #[arg(long, global = true, value_name = "N")]
    pub max_paths: Option<String>,
    /// Comma-separated API prefixes marking slicing criteria [default: Cipher.]
    #[arg(long, global = true, value_name = "LIST")]
    pub targets: Option<String>,
    /// Seed of the run's random generator [default: 0]
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<String>,
}

impl ConfigArgs {
    pub fn overrides(&self) -> Vec<(&'static str, &str)> {
        let all = [
            ("dim", &self.dim),
            ("window", &self.window),
            ("negatives", &self.negatives),
            ("batch", &self.batch),
            ("epochs", &self.epochs),
            ("lr", &self.lr),
            ("alpha", &self.alpha),
            ("budget", &self.budget),
            ("max_len", &self.max_len),
            ("max_call_depth", &self.max_call_depth),
            ("embed_lr", &self.embed_lr),
            ("subsample", &self.subsample),
            ("hidden", &self.hidden),
            ("layers", &self.layers),
            ("loss_mode", &self.loss_mode),
            ("pooling", &self.pooling),
            ("optimizer", &self.optimizer),
            ("clip_norm", &self.clip_norm),
            ("api_min_freq", &self.api_min_freq),
            ("const_min_freq", &self.const_min_freq),
            ("train_frac", &self.train_frac),
            ("max_paths", &self.max_paths),
            ("targets", &self.targets),
            ("seed", &self.seed),
        ];
        all.into_iter().filter_map(|(k, v)| v.as_deref().map(|v| (k, v))).collect()
    }
}

/// Which side of the seeded grouped train/test split to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Part {
    All,
    Train,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SynthKind {
    LowFreqVariant,
    SimilarApi,
    Interchangeable,
    Programs,
    Dags,
}

impl SynthKind {
    pub fn challenge(self) -> Option<ChallengeKind> {
        match self {
            SynthKind::LowFreqVariant => Some(ChallengeKind::LowFreqVariant),
            SynthKind::SimilarApi => Some(ChallengeKind::SimilarApi),
            _ => None,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Backward-slice every criterion of a program
    Slice {
        #[arg(long)]
        program: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build API dependence graphs from programs
    BuildGraph {
        #[arg(long, num_args = 1.., required = true)]
        program: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Enumerate every dependence path of every graph into a corpus
    ExtractPaths {
        #[arg(long)]
        graphs: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Select a budget of diverse dependence paths per graph into a corpus
    SelectPaths {
        #[arg(long)]
        graphs: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build a vocabulary and train skip-gram embeddings on a corpus
    TrainEmbed {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, value_enum, default_value = "all")]
        part: Part,
        /// Output directory
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a single-path model
    Train {
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Train a multi-path model on path sets of at most `budget` paths
    TrainMulti {
        #[command(flatten)]
        train: TrainArgs,
        /// Start from the weights of a trained single-path model directory
        #[arg(long)]
        init_model: Option<PathBuf>,
    },
    /// Evaluate a trained model on a corpus
    Eval {
        /// Model directory
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        part: Part,
        /// Corpus whose records define the known keys [default: --corpus]
        #[arg(long)]
        index_corpus: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "train")]
        index_part: Part,
        /// Top-k cutoffs to report
        #[arg(long, value_delimiter = ',', default_value = "1,5,10")]
        k: Vec<usize>,
        /// Output directory
        #[arg(long)]
        out: PathBuf,
    },
    /// Rank next-API candidates for one or more paths
    Recommend {
        /// Model directory
        #[arg(long)]
        model: PathBuf,
        /// Space-separated tokens of one path; repeat for a path set
        #[arg(long = "path", required = true)]
        paths: Vec<String>,
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate synthetic corpora, programs or graphs
    GenSynthetic {
        #[arg(long, value_enum)]
        kind: SynthKind,
        /// Number of programs, graphs or sentences [default depends on kind]
        #[arg(long)]
        count: Option<usize>,
        /// Largest random graph [default: 8]
        #[arg(long, default_value_t = 8)]
        max_nodes: usize,
        /// Output file, or directory for programs
        #[arg(long)]
        out: PathBuf,
    },
    /// Check path-selection invariants on random graphs
    OracleCheck {
        #[arg(long, default_value_t = 1000)]
        count: usize,
        #[arg(long, default_value_t = 8)]
        max_nodes: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, value_enum, default_value = "train")]
    pub part: Part,
    /// Vocabulary file [default: built from the corpus]
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Pretrained embedding file matching the vocabulary
    #[arg(long)]
    pub embedding: Option<PathBuf>,
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let line = serde_json::json!({ "category": e.category(), "exit": e.exit_code(), "message": e.to_string() });
            eprintln!("error: {line}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

