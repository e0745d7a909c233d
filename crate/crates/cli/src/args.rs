use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "softneg", version, about = "Soft-label contrastive training and negation benchmarks")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// Seed for every random draw; overrides the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Directory for artifacts. Existing files are never overwritten.
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,

    /// Training config JSON; keys override the preset.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Worker thread cap.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[arg(long, global = true, value_enum, default_value_t = Preset::Desk)]
    pub preset: Preset,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    Desk,
    Paper,
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Preset::Desk => "desk",
            Preset::Paper => "paper",
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic paired corpus as JSON lines.
    GenCorpus(GenCorpus),
    /// Train on a corpus file and write a checkpoint and metrics.
    Train(Train),
    /// Generate negation alignment triplets.
    GenAlign(GenAlign),
    /// Run the evaluation protocols on a model.
    Eval(Eval),
    /// Train and evaluate the standard ablation configs.
    Ablate(Ablate),
    /// Compare analytic and finite-difference gradients.
    GradCheck(GradCheck),
}

#[derive(Debug, Args)]
pub struct CorpusArgs {
    /// Number of reports to generate.
    #[arg(long, default_value_t = 2000)]
    pub n: usize,

    /// Fraction of normal reports.
    #[arg(long)]
    pub normal_fraction: Option<f64>,

    /// Share of normal reports drawn from the fixed templates.
    #[arg(long)]
    pub duplicate_mass: Option<f64>,
}

#[derive(Debug, Args)]
pub struct GenCorpus {
    #[command(flatten)]
    pub corpus: CorpusArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Labels {
    Soft,
    Hard,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OptimizerArg {
    Sgd,
    Adamw,
}

#[derive(Debug, Args)]
pub struct TrainOverrides {
    /// Passes over the corpus
    #[arg(long)]
    pub epochs: Option<usize>,

    /// Learning rate
    #[arg(long)]
    pub lr: Option<f64>,

    #[arg(long)]
    pub batch_size: Option<usize>,

    /// Logit temperature
    #[arg(long)]
    pub tau: Option<f64>,

    /// Fraction of eligible batch rows that get a negated copy
    #[arg(long)]
    pub hard_negative_rate: Option<f64>,

    /// `hard` replaces fused targets with the identity
    #[arg(long, value_enum)]
    pub labels: Option<Labels>,

    /// `sgd` switches to momentum-free SGD, `adamw` to default AdamW
    #[arg(long, value_enum)]
    pub optimizer: Option<OptimizerArg>,

    /// Record elapsed time per epoch (makes metrics non-reproducible).
    #[arg(long)]
    pub record_wall_time: bool,
}

#[derive(Debug, Args)]
pub struct Train {
    /// Corpus JSON lines from gen-corpus.
    #[arg(long)]
    pub corpus: PathBuf,

    #[command(flatten)]
    pub overrides: TrainOverrides,

    /// Also write every step's soft-target matrix.
    #[arg(long)]
    pub dump_targets: bool,
}

#[derive(Debug, Args)]
pub struct GenAlign {
    /// Source corpus; generated from --seed when absent.
    #[arg(long)]
    pub corpus: Option<PathBuf>,

    #[command(flatten)]
    pub generate: CorpusArgs,

    /// Weight multiplier for the prioritized findings.
    #[arg(long, default_value_t = 2.0)]
    pub priority_boost: f64,
}

#[derive(Debug, Args)]
pub struct Eval {
    /// Checkpoint path, or `oracle` / `random`.
    #[arg(long)]
    pub model: String,

    /// Evaluation corpus; generated from --seed when absent.
    #[arg(long)]
    pub corpus: Option<PathBuf>,

    #[command(flatten)]
    pub generate: CorpusArgs,

    /// Triplet file from gen-align; built from the corpus when absent.
    #[arg(long)]
    pub align: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct Ablate {
    /// How many of hard-labels, soft, hardneg, both to run, in that order.
    #[arg(long, default_value_t = 4, value_parser = clap::value_parser!(u8).range(2..=4))]
    pub configs: u8,

    /// Training corpus size.
    #[arg(long, default_value_t = 2000)]
    pub n: usize,

    /// Evaluation corpus size.
    #[arg(long, default_value_t = 2000)]
    pub eval_n: usize,

    #[command(flatten)]
    pub overrides: TrainOverrides,
}

#[derive(Debug, Args)]
pub struct GradCheck {
    /// Central-difference step
    #[arg(long, default_value_t = 1e-5)]
    pub eps: f64,

    /// Pass threshold on the maximum relative error.
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,

    /// Batch size of the probe
    #[arg(long, default_value_t = 12)]
    pub batch: usize,

    /// Hard negatives in the probe batch, as a fraction of eligible rows
    #[arg(long, default_value_t = 0.5)]
    pub hard_negative_rate: f64,
}
