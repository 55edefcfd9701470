use clap::{Parser, Subcommand, ValueEnum};
use sparsebm::config::{ConfigFile, ExperimentConfig};
use sparsebm::runner::{ExportKind, Runner};
use std::path::PathBuf;
use std::process::ExitCode;

/// Train, prune and evaluate binary RBMs; pretrain and fine-tune sparse
/// deep belief networks. Every command is deterministic for a fixed
/// config and seed.
#[derive(Parser)]
#[command(name = "sparsebm", version)]
struct Cli {
    /// Experiment config file (key = value sections; see docs/FORMATS.md)
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides the config's top-level seed
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory (default: [output].dir, else ./out)
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker threads for parallel sections (AIS runs, fine-tune trials)
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum ImageKind {
    ReceptiveFields,
    GibbsSamples,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train an RBM on the configured dataset
    Train,
    /// Iteratively prune and retrain a trained model
    Prune {
        #[arg(long)]
        model: PathBuf,
    },
    /// Exact log partition function + average test log-probability
    EvalExact {
        #[arg(long)]
        model: PathBuf,
        /// Largest enumerable layer (default from [eval].exact_limit)
        #[arg(long)]
        limit: Option<usize>,
    },
    /// AIS estimate of the partition function + test log-probability
    EvalAis {
        #[arg(long)]
        model: PathBuf,
    },
    /// Greedy layer-wise DBN pretraining
    DbnPretrain,
    /// Sparse architecture selection (prune each layer while pretraining)
    DbnSparsePretrain,
    /// Supervised fine-tuning of a pretrained stack
    Finetune {
        #[arg(long)]
        stack: PathBuf,
    },
    /// Receptive-field tiles or Gibbs-chain sample frames as PGM files
    ExportImages {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, value_enum)]
        kind: ImageKind,
        /// Tiles (receptive fields) or chains (samples)
        #[arg(long, default_value_t = 100)]
        count: usize,
        /// Gibbs steps between sample frames
        #[arg(long, default_value_t = 1000)]
        steps: u32,
        /// Sample frames per chain
        #[arg(long, default_value_t = 10)]
        frames: usize,
    },
    /// Surviving-weight histograms of two models over shared bins
    ExportHistogram {
        #[arg(long)]
        before: PathBuf,
        #[arg(long)]
        after: PathBuf,
        #[arg(long, default_value_t = 100)]
        bins: usize,
    },
    /// Baseline + both pruning strategies, one CSV row per model
    RunTable,
    /// Sparsity vs log-probability sweeps with and without retraining
    RunTradeoff,
}

fn run(cli: Cli) -> sparsebm::Result<()> {
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| sparsebm::Error::Config(format!("--jobs: {e}")))?;
    }
    let file = match &cli.config {
        Some(path) => ConfigFile::load(path)?,
        None => ConfigFile::parse("")?,
    };
    let cfg = ExperimentConfig::resolve(file, cli.seed, cli.out)?;
    let runner = Runner::new(cfg);
    match cli.cmd {
        Cmd::Train => runner.train(),
        Cmd::Prune { model } => runner.prune(&model),
        Cmd::EvalExact { model, limit } => runner.eval_exact(&model, limit),
        Cmd::EvalAis { model } => runner.eval_ais(&model),
        Cmd::DbnPretrain => runner.dbn_pretrain(),
        Cmd::DbnSparsePretrain => runner.dbn_sparse_pretrain(),
        Cmd::Finetune { stack } => runner.finetune(&stack),
        Cmd::ExportImages { model, kind, count, steps, frames } => {
            let kind = match kind {
                ImageKind::ReceptiveFields => ExportKind::ReceptiveFields,
                ImageKind::GibbsSamples => ExportKind::GibbsSamples,
            };
            runner.export_images(&model, kind, count, steps, frames)
        }
        Cmd::ExportHistogram { before, after, bins } => {
            runner.export_histogram(&before, &after, bins)
        }
        Cmd::RunTable => runner.run_table(),
        Cmd::RunTradeoff => runner.run_tradeoff(),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
