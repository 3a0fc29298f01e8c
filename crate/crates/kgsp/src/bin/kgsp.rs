//! Thin command-line front end over [`kgsp::commands`].
//!
//! Exit codes: 0 success, 1 domain error (bad data, impossible request),
//! 2 I/O error.

use clap::{Args, Parser, Subcommand};
use kgsp::commands;
use kgsp::config::ExperimentConfig;
use kgsp::error::Result;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "kgsp",
    version,
    about = "Compositional zero-shot recognition on precomputed features"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Split a fully labeled train set into object-only and state-only halves
    SplitPczsl(CommonArgs),
    /// Score the feasibility of every composition from word embeddings
    Feasibility(CommonArgs),
    /// Train the primitive classifiers
    Train(CommonArgs),
    /// Evaluate a checkpoint (bias sweep for owczsl, single point for pczsl)
    Eval(CommonArgs),
    /// Generate a synthetic dataset with an exact feasibility oracle
    Synth(CommonArgs),
    /// Render a metrics CSV as a table
    Report {
        /// Path to a metrics.csv written by `eval`
        metrics: PathBuf,
    },
}

#[derive(Args, Default)]
struct CommonArgs {
    /// Config file of `key = value` lines; flags override its keys
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed for all randomness (mandatory wherever randomness is consumed)
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    features: Option<PathBuf>,
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long)]
    feasibility: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Output file (split-pczsl, feasibility) or directory (train, eval, synth)
    #[arg(long)]
    out: Option<PathBuf>,
    /// owczsl or pczsl
    #[arg(long)]
    mode: Option<String>,
    /// off, vanilla or kg
    #[arg(long)]
    pseudo: Option<String>,
    /// knowledge or compcos
    #[arg(long)]
    method: Option<String>,
    /// Restrict inference to feasible compositions (needs --feasibility)
    #[arg(long, conflicts_with = "no_mask")]
    mask: bool,
    #[arg(long = "no-mask")]
    no_mask: bool,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    warmup_epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    entropy_weight: Option<f64>,
    #[arg(long)]
    vanilla_threshold: Option<f64>,
    #[arg(long)]
    dropout: Option<f64>,
    /// Comma-separated hidden layer widths, e.g. 768,1024
    #[arg(long)]
    hidden_dims: Option<String>,
    #[arg(long)]
    states: Option<usize>,
    #[arg(long)]
    objects: Option<usize>,
    #[arg(long)]
    pad_objects: Option<usize>,
    #[arg(long)]
    state_dim: Option<usize>,
    #[arg(long)]
    object_dim: Option<usize>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    seen: Option<usize>,
    #[arg(long)]
    train_per_comp: Option<usize>,
    #[arg(long)]
    test_per_comp: Option<usize>,
}

impl CommonArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let base = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        let mut flags = ExperimentConfig {
            manifest: self.manifest.clone(),
            features: self.features.clone(),
            embeddings: self.embeddings.clone(),
            feasibility: self.feasibility.clone(),
            checkpoint: self.checkpoint.clone(),
            out: self.out.clone(),
            seed: self.seed,
            epochs: self.epochs,
            batch_size: self.batch_size,
            warmup_epochs: self.warmup_epochs,
            lr: self.lr,
            weight_decay: self.weight_decay,
            entropy_weight: self.entropy_weight,
            vanilla_threshold: self.vanilla_threshold,
            dropout: self.dropout,
            states: self.states,
            objects: self.objects,
            pad_objects: self.pad_objects,
            state_dim: self.state_dim,
            object_dim: self.object_dim,
            noise: self.noise,
            seen: self.seen,
            train_per_comp: self.train_per_comp,
            test_per_comp: self.test_per_comp,
            ..ExperimentConfig::default()
        };
        if let Some(mode) = &self.mode {
            flags.mode = Some(mode.parse()?);
        }
        if let Some(pseudo) = &self.pseudo {
            flags.pseudo = Some(pseudo.parse()?);
        }
        if let Some(method) = &self.method {
            flags.method = Some(method.parse()?);
        }
        if let Some(dims) = &self.hidden_dims {
            let mut cfg = ExperimentConfig::default();
            cfg.set("hidden_dims", dims)?;
            flags.hidden_dims = cfg.hidden_dims;
        }
        if self.mask {
            flags.mask = Some(true);
        } else if self.no_mask {
            flags.mask = Some(false);
        }
        Ok(base.merge(flags))
    }
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::SplitPczsl(args) => commands::cmd_split_pczsl(&args.resolve()?),
        Command::Feasibility(args) => commands::cmd_feasibility(&args.resolve()?),
        Command::Train(args) => commands::cmd_train(&args.resolve()?),
        Command::Eval(args) => commands::cmd_eval(&args.resolve()?),
        Command::Synth(args) => commands::cmd_synth(&args.resolve()?),
        Command::Report { metrics } => commands::cmd_report(metrics),
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
