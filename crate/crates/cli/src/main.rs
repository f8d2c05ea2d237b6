//! `badge`: train victims, run universal perturbation attacks and evaluate them.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.

mod commands;
mod settings;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// A problem with the invocation rather than the computation.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Parser)]
#[command(name = "badge", version, about = "Decision-based universal adversarial perturbation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a victim classifier and save it.
    TrainVictim(TrainArgs),
    /// Fit a universal perturbation against a saved victim.
    Attack(AttackArgs),
    /// Measure a saved perturbation against a victim.
    Eval(EvalArgs),
    /// Cross-evaluate perturbations on victims.
    Transfer(TransferArgs),
    /// Attack over a grid of budgets and seeds.
    Sweep(SweepArgs),
}

#[derive(Args, Clone, Default)]
pub struct Common {
    /// INI config file; flags override its keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Clone, Default)]
pub struct DataArgs {
    /// Dataset: mnist or blobs.
    #[arg(long = "data")]
    pub source: Option<String>,
    /// Directory holding the four standard MNIST IDX files.
    #[arg(long)]
    pub mnist_dir: Option<String>,
    #[arg(long)]
    pub train_images: Option<String>,
    #[arg(long)]
    pub train_labels: Option<String>,
    #[arg(long)]
    pub test_images: Option<String>,
    #[arg(long)]
    pub test_labels: Option<String>,
    /// Keep only the first N training images.
    #[arg(long)]
    pub train_subset: Option<String>,
    #[arg(long)]
    pub blob_seed: Option<String>,
    #[arg(long)]
    pub blob_per_class: Option<String>,
    #[arg(long)]
    pub blob_classes: Option<String>,
    #[arg(long)]
    pub blob_dim: Option<String>,
    #[arg(long)]
    pub blob_separation: Option<String>,
}

impl DataArgs {
    pub fn flags(&self) -> Vec<(&'static str, Option<String>)> {
        vec![
            ("data.source", self.source.clone()),
            ("data.mnist_dir", self.mnist_dir.clone()),
            ("data.train_images", self.train_images.clone()),
            ("data.train_labels", self.train_labels.clone()),
            ("data.test_images", self.test_images.clone()),
            ("data.test_labels", self.test_labels.clone()),
            ("data.train_subset", self.train_subset.clone()),
            ("data.blob_seed", self.blob_seed.clone()),
            ("data.blob_per_class", self.blob_per_class.clone()),
            ("data.blob_classes", self.blob_classes.clone()),
            ("data.blob_dim", self.blob_dim.clone()),
            ("data.blob_separation", self.blob_separation.clone()),
        ]
    }
}

#[derive(Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub data: DataArgs,
    /// linear, mlp or cnn.
    #[arg(long)]
    pub arch: Option<String>,
    #[arg(long)]
    pub epochs: Option<String>,
    #[arg(long)]
    pub lr: Option<String>,
    #[arg(long)]
    pub batch_size: Option<String>,
    #[arg(long)]
    pub hidden: Option<String>,
    #[arg(long)]
    pub seed: Option<String>,
    /// Model file to write.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Clone, Default)]
pub struct AttackFlags {
    /// decision or score.
    #[arg(long)]
    pub mode: Option<String>,
    /// Target class; switches to the targeted objective.
    #[arg(long)]
    pub target: Option<String>,
    /// acc, target_acc, ce, kld or emd.
    #[arg(long)]
    pub loss: Option<String>,
    /// spsa, spsa_am, spsa_gc, rgf or rgf_adam.
    #[arg(long = "opt")]
    pub optimizer: Option<String>,
    /// Budget in pixel units.
    #[arg(long)]
    pub eps: Option<String>,
    /// l2 or linf.
    #[arg(long)]
    pub norm: Option<String>,
    /// radial or clamp.
    #[arg(long)]
    pub projection: Option<String>,
    #[arg(long)]
    pub batch_size: Option<String>,
    #[arg(long)]
    pub epochs: Option<String>,
    /// Cap on total updates; empty for epochs × batches.
    #[arg(long)]
    pub updates: Option<String>,
    /// Direction seed; also the data seed unless --data-seed is given.
    #[arg(long)]
    pub seed: Option<String>,
    #[arg(long)]
    pub data_seed: Option<String>,
    #[arg(long)]
    pub alpha_start: Option<String>,
    #[arg(long)]
    pub alpha_end: Option<String>,
    #[arg(long)]
    pub delta: Option<String>,
    #[arg(long)]
    pub delta_ratio: Option<String>,
    /// Updates between δ decays; empty for one epoch.
    #[arg(long)]
    pub delta_period: Option<String>,
    #[arg(long)]
    pub gamma: Option<String>,
    #[arg(long)]
    pub beta1: Option<String>,
    #[arg(long)]
    pub beta2: Option<String>,
    #[arg(long)]
    pub eta: Option<String>,
    #[arg(long)]
    pub momentum: Option<String>,
    #[arg(long)]
    pub checkpoint_interval: Option<String>,
    #[arg(long)]
    pub probe_size: Option<String>,
    #[arg(long)]
    pub intensity_scale: Option<String>,
    /// global or per_batch.
    #[arg(long)]
    pub clamp: Option<String>,
}

impl AttackFlags {
    pub fn flags(&self) -> Vec<(&'static str, Option<String>)> {
        vec![
            ("attack.mode", self.mode.clone()),
            ("attack.target", self.target.clone()),
            ("attack.loss", self.loss.clone()),
            ("attack.optimizer", self.optimizer.clone()),
            ("attack.eps", self.eps.clone()),
            ("attack.norm", self.norm.clone()),
            ("attack.projection", self.projection.clone()),
            ("attack.batch_size", self.batch_size.clone()),
            ("attack.epochs", self.epochs.clone()),
            ("attack.updates", self.updates.clone()),
            ("attack.seed", self.seed.clone()),
            ("attack.data_seed", self.data_seed.clone()),
            ("attack.alpha_start", self.alpha_start.clone()),
            ("attack.alpha_end", self.alpha_end.clone()),
            ("attack.delta", self.delta.clone()),
            ("attack.delta_ratio", self.delta_ratio.clone()),
            ("attack.delta_period", self.delta_period.clone()),
            ("attack.gamma", self.gamma.clone()),
            ("attack.beta1", self.beta1.clone()),
            ("attack.beta2", self.beta2.clone()),
            ("attack.eta", self.eta.clone()),
            ("attack.momentum", self.momentum.clone()),
            ("attack.checkpoint_interval", self.checkpoint_interval.clone()),
            ("attack.probe_size", self.probe_size.clone()),
            ("attack.intensity_scale", self.intensity_scale.clone()),
            ("attack.clamp", self.clamp.clone()),
        ]
    }
}

#[derive(Args)]
pub struct AttackArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub attack: AttackFlags,
    /// Victim model file.
    #[arg(long)]
    pub victim: PathBuf,
    /// Continue from a checkpoint written by the same configuration.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Output directory; defaults to $BADGE_OUT/attack.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub victim: PathBuf,
    #[arg(long)]
    pub pert: PathBuf,
    /// Also report target accuracy for this class.
    #[arg(long)]
    pub target: Option<String>,
    /// Matched-l2 random-noise trials; 0 skips the baseline.
    #[arg(long)]
    pub baseline_trials: Option<String>,
    #[arg(long)]
    pub baseline_seed: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct TransferArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, num_args = 1.., required = true)]
    pub victims: Vec<PathBuf>,
    /// Perturbation `i` must have been trained on victim `i`.
    #[arg(long, num_args = 1.., required = true)]
    pub perts: Vec<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub attack: AttackFlags,
    #[arg(long)]
    pub victim: PathBuf,
    /// Comma-separated ascending budgets.
    #[arg(long)]
    pub budgets: Option<String>,
    /// Comma-separated seeds.
    #[arg(long)]
    pub seeds: Option<String>,
    /// Worker threads for independent cells.
    #[arg(long)]
    pub jobs: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
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
    let result = match cli.command {
        Command::TrainVictim(a) => commands::train_victim(a),
        Command::Attack(a) => commands::attack(a),
        Command::Eval(a) => commands::eval(a),
        Command::Transfer(a) => commands::transfer(a),
        Command::Sweep(a) => commands::sweep(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.downcast_ref::<UsageError>().is_some() => {
            eprintln!("error: {e}");
            eprintln!("run `badge --help` for usage");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
