use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "talds", version, about = "Adaptive local-descriptor selection for few-shot classification")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a planted-cluster dataset (.tds files, classes.json, masks.json).
    GenSynth(GenSynthArgs),
    /// Episodic training; writes checkpoint.json, loss.csv and config.toml.
    Train(TrainArgs),
    /// Evaluate a checkpoint on random episodes.
    Eval(EvalArgs),
    /// Evaluate a checkpoint with F_Γ and F_Ψ switched on and off.
    Ablate(EvalArgs),
    /// Finite-difference check of the full pipeline on a toy episode.
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Debug)]
pub struct GenSynthArgs {
    #[arg(long, default_value_t = 10)]
    pub classes: usize,
    #[arg(long, default_value_t = 32)]
    pub dim: usize,
    /// Grid as HxW.
    #[arg(long, default_value = "6x6", value_parser = parse_grid)]
    pub grid: (usize, usize),
    #[arg(long, default_value_t = 0.4)]
    pub signal_fraction: f64,
    #[arg(long, default_value_t = 4.0)]
    pub separation: f64,
    #[arg(long, default_value_t = 1.0)]
    pub noise: f64,
    #[arg(long, default_value_t = 20)]
    pub samples_per_class: usize,
    #[arg(long, default_value_t = 4)]
    pub distractors: usize,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Write into a non-empty output directory.
    #[arg(long)]
    pub force: bool,
}

fn parse_grid(s: &str) -> Result<(usize, usize), String> {
    let (h, w) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("grid `{s}` is not HxW"))?;
    let h: usize = h.trim().parse().map_err(|_| format!("bad grid height in `{s}`"))?;
    let w: usize = w.trim().parse().map_err(|_| format!("bad grid width in `{s}`"))?;
    if h == 0 || w == 0 {
        return Err("grid sides must be ≥ 1".into());
    }
    Ok((h, w))
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// TOML run configuration; flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Required when no configuration file is given.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Dataset directory.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub episodes_per_epoch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Step schedule FACTOR@EVERY, e.g. 0.1@10.
    #[arg(long)]
    pub lr_decay: Option<String>,
    #[arg(long)]
    pub lambda1: Option<f64>,
    #[arg(long)]
    pub lambda2: Option<f64>,
    #[arg(long)]
    pub k: Option<usize>,
    /// adaptive, all, fixed:<V> or top:<τ>.
    #[arg(long)]
    pub strategy: Option<String>,
    #[arg(long)]
    pub no_support_selection: bool,
    #[arg(long)]
    pub no_query_selection: bool,
    #[arg(long)]
    pub two_phase: bool,
    #[arg(long)]
    pub aux_weight: Option<f64>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset directory; defaults to the one the checkpoint was trained on.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub episodes: Option<usize>,
    #[arg(long)]
    pub n_way: Option<usize>,
    #[arg(long)]
    pub k_shot: Option<usize>,
    #[arg(long)]
    pub queries: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub workers: Option<usize>,
    /// Evaluate with a different query strategy than the checkpoint's.
    #[arg(long)]
    pub strategy: Option<String>,
    #[arg(long)]
    pub json_out: Option<PathBuf>,
    #[arg(long)]
    pub csv_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Take selection hyperparameters from this run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 1e-6)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    /// Scales every analytic gradient (negative control).
    #[arg(long, hide = true)]
    pub sabotage: Option<f64>,
}
