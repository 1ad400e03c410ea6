mod commands;
mod train_args;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::train_args::TrainArgs;

/// Survival modelling over patch-feature bags with EM patch selection and
/// genomic reconstruction.
#[derive(Parser, Debug)]
#[command(name = "histosurv", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic cohort with planted survival signal
    Gen(GenArgs),
    /// Fit k-means centroids and a diagonal mixture on a cohort's patches
    FitGmm(FitGmmArgs),
    /// Train one cross-validation fold and save its checkpoint
    Train(TrainCmd),
    /// Score a fold's held-out patients with a checkpoint (bags only)
    Eval(EvalArgs),
    /// Train and evaluate every fold
    Cv(CvArgs),
    /// Cross-validate a grid of configurations over several seeds
    Ablate(AblateArgs),
    /// Median-risk stratification, Kaplan-Meier curves and logrank test
    Km(KmArgs),
    /// Finite-difference check of the full training objective
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Debug, Serialize)]
struct GenArgs {
    /// Output directory for the manifest, bags and genomic files
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 200)]
    n_patients: usize,
    #[arg(long, default_value_t = 32)]
    dim: usize,
    #[arg(long, default_value_t = 48)]
    min_patches: usize,
    #[arg(long, default_value_t = 96)]
    max_patches: usize,
    #[arg(long, default_value_t = 8)]
    latent_clusters: usize,
    /// Std of genomic noise
    #[arg(long, default_value_t = 0.3)]
    noise: f64,
    #[arg(long, default_value_t = 1.0)]
    cluster_separation: f64,
    #[arg(long, default_value_t = 0.3)]
    max_signal_fraction: f64,
    #[arg(long, default_value_t = 1.5)]
    risk_scale: f64,
    #[arg(long, default_value_t = 3.0)]
    censor_horizon: f64,
    #[arg(long, default_value_t = 5)]
    folds: usize,
}

#[derive(Args, Debug, Serialize)]
struct FitGmmArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Fit on this fold's training split only; the whole cohort otherwise
    #[arg(long)]
    fold: Option<usize>,
    #[command(flatten)]
    train: TrainArgs,
}

#[derive(Args, Debug, Serialize)]
struct TrainCmd {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    fold: usize,
    #[command(flatten)]
    train: TrainArgs,
}

#[derive(Args, Debug, Serialize)]
struct EvalArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct CvArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    train: TrainArgs,
}

#[derive(ValueEnum, Clone, Copy, Debug, Serialize)]
#[serde(rename_all = "lowercase")]
enum Grid {
    /// full, vga-only, neither
    Modules,
    /// em, cluster, random, none
    Strategies,
    /// kl, mse, l1, cosine
    Losses,
}

#[derive(Args, Debug, Serialize)]
struct AblateArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = Grid::Modules)]
    grid: Grid,
    /// Comma-separated run seeds
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
    seeds: Vec<u64>,
    #[command(flatten)]
    train: TrainArgs,
}

#[derive(Args, Debug, Serialize)]
struct KmArgs {
    /// Risk table with `sample_id, risk, bin, censor, time` columns
    #[arg(long)]
    risks: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct GradcheckArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 6)]
    dim: usize,
    #[arg(long, default_value_t = 3)]
    n_l: usize,
    #[arg(long, default_value_t = 1.0)]
    lambda_kl: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-3)]
    tol: f64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Gen(a) => commands::gen(a),
        Command::FitGmm(a) => commands::fit_gmm(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Cv(a) => commands::cv(a),
        Command::Ablate(a) => commands::ablate(a),
        Command::Km(a) => commands::km(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            // library errors already embed their source in the message
            let mut msg = String::new();
            for cause in err.chain() {
                let text = cause.to_string();
                if !msg.contains(&text) {
                    if !msg.is_empty() {
                        msg.push_str(": ");
                    }
                    msg.push_str(&text);
                }
            }
            eprintln!("error: {msg}");
            let code = err
                .chain()
                .find_map(|e| e.downcast_ref::<histosurv_core::Error>())
                .map_or(1, histosurv_core::Error::exit_code);
            ExitCode::from(u8::try_from(code).unwrap_or(1))
        }
    }
}
