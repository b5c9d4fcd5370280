use std::path::PathBuf;

use chronocon::analysis::Arm;
use chronocon::cohort::Split;
use chronocon::training::LossVariant;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "chronocon", version, about = "Chronological contrastive pretraining experiments")]
pub struct Cli {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Cohort CSV. Without it, the synthetic cohort described by the
    /// configuration is generated in memory.
    #[arg(long, global = true)]
    pub cohort: Option<PathBuf>,

    /// Overrides the cohort, split and training seeds.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Concurrent sweep workers.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,

    /// Directory for default output paths.
    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a cohort and its latent severity trajectories.
    Generate {
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Stage 1: train an encoder without fine-tuning labels.
    Pretrain {
        #[arg(long, value_parser = parse_loss)]
        loss: LossVariant,
        #[arg(long, value_enum, default_value_t = OnOff::Off)]
        dae: OnOff,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Stage 2: fit the regression heads, starting from a pretrained model
    /// or from scratch.
    Finetune {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        labeled_patients: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write per-visit predictions of a fine-tuned model.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, value_enum, default_value_t = SplitArg::Test)]
        split: SplitArg,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write the matching true labels.
        #[arg(long)]
        truth_out: Option<PathBuf>,
    },
    /// Agreement statistics for a prediction table against the truth.
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        /// Score table or cohort CSV.
        #[arg(long)]
        truth: PathBuf,
        /// Second prediction table for the paired t-test.
        #[arg(long)]
        pred_b: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Label-efficiency sweep over arms, labeled-patient counts and
    /// repetitions. Resumes from completed cells in the output directory.
    Sweep(SweepArgs),
    #[command(hide = true)]
    SweepWorker(WorkerArgs),
    /// PCA and similarity-versus-label-difference tables of an encoder.
    AnalyzeEmbeddings {
        #[arg(long)]
        model: Option<PathBuf>,
        /// Score type for label differences; the first one by default.
        #[arg(long)]
        score: Option<String>,
        #[arg(long, value_enum, default_value_t = SplitArg::All)]
        split: SplitArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Plot-ready CSV files and a markdown summary from a sweep table.
    Report {
        #[arg(long)]
        sweep: PathBuf,
        #[arg(long)]
        analysis: Option<PathBuf>,
    },
    /// Debugging helpers for pair construction.
    Pairing {
        #[command(subcommand)]
        command: PairingCommand,
    },
    /// Debugging helpers for loss evaluation.
    Loss {
        #[command(subcommand)]
        command: LossCommand,
    },
    /// Print the effective configuration as TOML.
    Config,
}

#[derive(Debug, Subcommand)]
pub enum LossCommand {
    /// Evaluate a loss on a batch given as a cohort CSV, using the feature
    /// columns as embeddings.
    Eval {
        #[arg(long)]
        batch: PathBuf,
        #[arg(long, value_enum, default_value_t = PairingVariant::Chrono)]
        variant: PairingVariant,
        #[arg(long)]
        score: Option<String>,
    },
}

#[derive(Debug, Subcommand)]
pub enum PairingCommand {
    /// Print the pairing plan of a batch given as a cohort CSV.
    Dump {
        #[arg(long)]
        batch: PathBuf,
        #[arg(long, value_enum, default_value_t = PairingVariant::Chrono)]
        variant: PairingVariant,
        #[arg(long)]
        score: Option<String>,
    },
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long, value_delimiter = ',')]
    pub arms: Option<Vec<Arm>>,
    #[arg(long, value_delimiter = ',')]
    pub n_labeled: Option<Vec<usize>>,
    #[arg(long)]
    pub repetitions: Option<usize>,
    /// Discard completed cells instead of resuming.
    #[arg(long)]
    pub fresh: bool,
}

#[derive(Debug, Args)]
pub struct WorkerArgs {
    #[arg(long)]
    pub arm: Arm,
    #[arg(long)]
    pub rep: usize,
    /// Omitted for pretraining jobs.
    #[arg(long)]
    pub n_labeled: Option<usize>,
    #[arg(long)]
    pub encoder: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OnOff {
    On,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
    Test,
    All,
}

impl SplitArg {
    pub fn split(self) -> Option<Split> {
        match self {
            SplitArg::Train => Some(Split::Train),
            SplitArg::Val => Some(Split::Val),
            SplitArg::Test => Some(Split::Test),
            SplitArg::All => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PairingVariant {
    Chrono,
    OrdinalY,
    Rnc,
    RncT,
    Simclr,
}

fn parse_loss(s: &str) -> Result<LossVariant, String> {
    s.parse().map_err(|_| {
        let names: Vec<&str> = LossVariant::ALL.iter().map(|v| v.as_str()).collect();
        format!("expected one of {}", names.join(", "))
    })
}
