//! Command-line surface. Config-file fields can all be overridden by a flag
//! of the same (snake_case) name.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use pmace::driver::AlgoConfig;
use pmace::io::preprocess::PreprocessConfig;
use pmace::synthetic::SyntheticSpec;

#[derive(Debug, Parser)]
#[command(name = "pmace", version, about = "Blind multi-mode PMACE ptychography")]
pub struct Cli {
    /// Only log warnings and errors.
    #[arg(long, short, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a synthetic scan and write it as a dataset.
    Simulate(SimulateArgs),
    /// Run the reconstruction on a dataset.
    Reconstruct(ReconstructArgs),
    /// Turn raw detector frames into an amplitude dataset.
    Preprocess(PreprocessArgs),
    /// Report metrics for a saved reconstruction.
    Evaluate(EvaluateArgs),
    /// Summarize a dataset manifest.
    Info(InfoArgs),
}

#[derive(Debug, Args)]
#[command(rename_all = "snake_case")]
pub struct SimulateArgs {
    /// Output directory for the dataset.
    #[arg(long)]
    pub out: PathBuf,
    /// TOML file with a synthetic spec; defaults apply otherwise.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub image_size: Option<usize>,
    #[arg(long)]
    pub probe_size: Option<usize>,
    #[arg(long)]
    pub spacing: Option<usize>,
    #[arg(long)]
    pub jitter: Option<usize>,
    #[arg(long)]
    pub grid_seed: Option<u64>,
    #[arg(long)]
    pub phantom_seed: Option<u64>,
    #[arg(long)]
    pub modes: Option<usize>,
    #[arg(long)]
    pub main_fraction: Option<f64>,
    #[arg(long)]
    pub photon_rate: Option<f64>,
    #[arg(long)]
    pub dark_level: Option<f64>,
    /// Seed of the Poisson draws.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub noiseless: Option<bool>,
}

impl SimulateArgs {
    pub fn apply(&self, spec: &mut SyntheticSpec) {
        macro_rules! set {
            ($($field:ident => $target:expr),* $(,)?) => {
                $(if let Some(v) = self.$field.clone() { $target = v; })*
            };
        }
        set! {
            image_size => spec.image_size,
            probe_size => spec.probe_size,
            spacing => spec.spacing,
            jitter => spec.jitter,
            grid_seed => spec.grid_seed,
            phantom_seed => spec.phantom_seed,
            modes => spec.modes,
            main_fraction => spec.main_fraction,
            photon_rate => spec.sim.photon_rate,
            dark_level => spec.sim.dark_level,
            seed => spec.sim.seed,
            noiseless => spec.sim.noiseless,
        }
    }
}

#[derive(Debug, Args)]
#[command(rename_all = "snake_case")]
pub struct AlgoArgs {
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub kappa: Option<f64>,
    #[arg(long)]
    pub alpha1: Option<f64>,
    #[arg(long)]
    pub alpha2: Option<f64>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    /// Comma-separated iterations after which a mode is added; empty clears.
    #[arg(long, num_args = 0.., value_delimiter = ',')]
    pub mode_add_schedule: Option<Vec<usize>>,
    #[arg(long)]
    pub max_modes: Option<usize>,
    #[arg(long)]
    pub convergence_tol: Option<f64>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub auto_add_modes: Option<bool>,
    #[arg(long)]
    pub seed: Option<u64>,
}

impl AlgoArgs {
    pub fn apply(&self, cfg: &mut AlgoConfig) {
        macro_rules! set {
            ($($field:ident),*) => {
                $(if let Some(v) = self.$field.clone() { cfg.$field = v; })*
            };
        }
        set!(
            rho,
            kappa,
            alpha1,
            alpha2,
            max_iters,
            mode_add_schedule,
            max_modes,
            convergence_tol,
            auto_add_modes,
            seed
        );
    }
}

#[derive(Debug, Args)]
#[command(rename_all = "snake_case")]
pub struct ReconstructArgs {
    /// Dataset manifest (JSON).
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// TOML file with algorithm parameters.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub algo: AlgoArgs,
    /// Skip the convergence plots.
    #[arg(long)]
    pub no_plots: bool,
}

#[derive(Debug, Args)]
#[command(rename_all = "snake_case")]
pub struct PreprocessArgs {
    /// Manifest of a raw-intensity dataset.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// TOML file with preprocessing parameters.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub dark_frame_count: Option<usize>,
    #[arg(long, num_args = 0.., value_delimiter = ',')]
    pub outlier_indices: Option<Vec<usize>>,
    #[arg(long)]
    pub crop_size: Option<usize>,
    #[arg(long)]
    pub tukey_shape: Option<f64>,
}

impl PreprocessArgs {
    pub fn apply(&self, cfg: &mut PreprocessConfig) {
        macro_rules! set {
            ($($field:ident),*) => {
                $(if let Some(v) = self.$field.clone() { cfg.$field = v; })*
            };
        }
        set!(dark_frame_count, outlier_indices, crop_size, tukey_shape);
    }
}

#[derive(Debug, Args)]
#[command(rename_all = "snake_case")]
pub struct EvaluateArgs {
    /// Directory written by `reconstruct`.
    #[arg(long)]
    pub result: PathBuf,
    /// Dataset to compare against; enables forward and ground-truth metrics.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Border excluded from the image NRMSE, in pixels.
    #[arg(long, default_value_t = 0)]
    pub margin: usize,
}

#[derive(Debug, Args)]
pub struct InfoArgs {
    /// Dataset manifest (JSON).
    #[arg(long)]
    pub data: PathBuf,
}
