mod commands;
mod error;
mod fetch;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "logictree", version, about = "Train, discretize and export convolutional logic gate networks")]
struct Cli {
    /// Worker threads (0 = all available cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Download a dataset into the cache directory.
    Fetch {
        dataset: String,
        /// Cache root (default: $LGN_DATA_DIR or ~/.cache/logictree).
        #[arg(long)]
        data_dir: Option<PathBuf>,
        /// Base URL (MNIST) or archive URL (CIFAR-10); file:// works too.
        #[arg(long)]
        url: Option<String>,
    },
    /// Train a LogicTreeNet and keep the best-validation checkpoint.
    Train(TrainArgs),
    /// Report relaxed and discretized accuracy of a checkpoint.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, value_enum, default_value_t = Split::Test)]
        split: Split,
        #[arg(long)]
        data_dir: Option<PathBuf>,
        /// Seed of the train/validation split.
        #[arg(long, default_value_t = 0)]
        split_seed: u64,
        /// Evaluate only the first N samples.
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Write the hard gate net of a checkpoint as netlist JSON.
    Discretize {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Simplify a netlist and report gate counts before and after.
    Synth {
        #[arg(long)]
        net: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Measure bit-parallel inference throughput on random inputs.
    Bench {
        #[arg(long)]
        net: PathBuf,
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
        #[arg(long, default_value_t = 3)]
        repeats: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// CSV destination (default: stdout).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Emit structural Verilog or netlist JSON.
    Export {
        #[arg(long)]
        net: PathBuf,
        #[arg(long, value_enum)]
        format: Format,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "logictree")]
        module: String,
    },
    /// Activation densities, gate histograms and gradient decay.
    Diag {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        data_dir: Option<PathBuf>,
        /// Validation samples used for activation densities.
        #[arg(long, default_value_t = 512)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        split_seed: u64,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Verilog,
    Json,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitArg {
    Residual,
    Gaussian,
}

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub dataset: String,
    #[arg(long)]
    pub size: Option<String>,
    /// JSON file with any of the hyperparameter fields; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma-separated seeds; one run per seed.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub ox: Option<usize>,
    #[arg(long)]
    pub input_bits: Option<u32>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub eval_interval: Option<usize>,
    #[arg(long)]
    pub groups: Option<usize>,
    #[arg(long, value_enum)]
    pub init: Option<InitArg>,
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    #[arg(long)]
    pub split_seed: Option<u64>,
    /// Use only the first N training samples.
    #[arg(long)]
    pub limit_train: Option<usize>,
    /// Print the resolved configuration and exit.
    #[arg(long)]
    pub dry_run: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let threads = cli.threads;
    match logictree::with_threads(threads, || commands::run(cli.command, threads)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
