//! `logicvae`: dataset generation, kernel jobs, training and evaluation.

mod config;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use logicvae::model::{EncoderCell, ModelMode};
use logicvae::Error;

#[derive(Parser, Debug)]
#[command(name = "logicvae", version, about = "Semantic graph VAEs for propositional formulae")]
pub struct Cli {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Machine-readable output on stdout.
    #[arg(long, global = true)]
    pub json: bool,
    /// Worker threads for data-parallel work.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Full-size model and training schedule.
    #[arg(long, global = true)]
    pub paper_scale: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a random formula dataset.
    GenDataset(GenArgs),
    /// Gram matrices, kernel PCA and context vectors.
    #[command(subcommand)]
    Kernel(KernelCmd),
    /// Train a VAE or CVAE.
    Train(TrainArgs),
    /// Evaluation protocols.
    #[command(subcommand)]
    Eval(EvalCmd),
    /// Encode a formula, decode greedily and compare.
    Roundtrip(RoundtripArgs),
}

#[derive(Args, Debug)]
pub struct GenArgs {
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub p_leaf: Option<f64>,
    #[arg(long)]
    pub count: usize,
    #[arg(long)]
    pub max_nodes: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct KernelOpts {
    /// exact or mc.
    #[arg(long)]
    pub mode: Option<String>,
    /// Monte Carlo sample count.
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
pub enum KernelCmd {
    /// Gram matrix over the anchors of a dataset.
    Gram {
        #[arg(long)]
        dataset: PathBuf,
        /// Use at most this many formulae.
        #[arg(long)]
        anchors: Option<usize>,
        #[command(flatten)]
        kernel: KernelOpts,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit kernel PCA from a dataset or a saved Gram matrix.
    Pca {
        #[arg(long, conflicts_with = "gram")]
        dataset: Option<PathBuf>,
        #[arg(long)]
        gram: Option<PathBuf>,
        #[arg(long)]
        anchors: Option<usize>,
        #[arg(long)]
        components: Option<usize>,
        #[command(flatten)]
        kernel: KernelOpts,
        #[arg(long)]
        out: PathBuf,
    },
    /// Context vectors of formulae or of raw valuations.
    Embed {
        #[arg(long)]
        pca: PathBuf,
        #[arg(long)]
        formula: Vec<String>,
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// CSV rows `bits,value`; `bits` lists x1..xn as 0/1, `value` is 1 or -1.
        #[arg(long)]
        valuations: Option<PathBuf>,
        /// CSV output instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Kernel value and context distance for every pair of a dataset.
    Pairs {
        #[arg(long)]
        pca: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, value_parser = parse_cell)]
    pub encoder: Option<EncoderCell>,
    /// Encode the reversed graph as well.
    #[arg(long)]
    pub bidirectional: Option<bool>,
    #[arg(long, value_parser = parse_mode)]
    pub mode: Option<ModelMode>,
    /// PCA model directory; required in CVAE mode.
    #[arg(long)]
    pub pca: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Also train the index-recovery head (needs --pca).
    #[arg(long)]
    pub hierarchical: bool,
    /// Decode without the grammar constraint.
    #[arg(long)]
    pub unconstrained: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ModelArgs {
    /// Checkpoint directory (a run directory's `checkpoint`).
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub pca: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Directory for the report files.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum EvalCmd {
    /// Reconstruction accuracy over a dataset.
    Accuracy {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        limit: Option<usize>,
        #[arg(long, default_value_t = 10)]
        z_samples: usize,
        #[arg(long, default_value_t = 10)]
        decodes: usize,
    },
    /// Validity, uniqueness and novelty of prior samples.
    Prior {
        #[command(flatten)]
        model: ModelArgs,
        /// Training set for novelty.
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        #[arg(long, default_value_t = 10)]
        decodes: usize,
    },
    /// Semantic distance and kernel value of conditional samples.
    CvaeMetrics {
        #[command(flatten)]
        model: ModelArgs,
        /// Formulae whose context vectors are the conditions.
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        limit: Option<usize>,
        #[arg(long, default_value_t = 100)]
        z_per_y: usize,
        #[arg(long, default_value_t = 10)]
        decodes: usize,
    },
    /// Pairwise statistics of a random formula pool.
    Baseline {
        #[arg(long)]
        pca: PathBuf,
        #[arg(long, default_value_t = 5000)]
        pool_size: usize,
        #[arg(long)]
        p_leaf: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Spherical interpolation around a formula's latent code.
    Slerp {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        formula: String,
        #[arg(long, default_value_t = 35)]
        points: usize,
        #[arg(long, default_value_t = 10)]
        decodes: usize,
    },
}

#[derive(Args, Debug)]
pub struct RoundtripArgs {
    #[arg(long)]
    pub formula: String,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub pca: Option<PathBuf>,
}

fn parse_cell(s: &str) -> Result<EncoderCell, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_mode(s: &str) -> Result<ModelMode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// 2 for configuration problems, 3 for bad data or files, 4 for numeric
/// failures.
fn exit_code(e: &Error) -> u8 {
    if e.is_numeric() {
        4
    } else if e.is_config() || matches!(e, Error::EnumerationOverflow { .. }) {
        2
    } else {
        3
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(t) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match run::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
