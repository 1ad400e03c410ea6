use std::path::PathBuf;

use anyhow::Context;
use clap::Args;
use histosurv_core::{ReconstructionLossKind, Strategy, TrainConfig};
use serde::Serialize;

/// One optional flag per training-config field. Unset flags fall back to
/// `--config` when given, then to the built-in defaults.
#[derive(Args, Debug, Default, Serialize)]
pub struct TrainArgs {
    /// JSON training config to start from
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, allow_negative_numbers = true)]
    pub learning_rate: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    pub lambda_kl: Option<f64>,
    /// Visual prompts per bag (capped at the bag size)
    #[arg(long)]
    pub n_s: Option<usize>,
    /// Reconstructed genomic tokens
    #[arg(long)]
    pub n_l: Option<usize>,
    /// Mixture components
    #[arg(long)]
    pub c_h: Option<usize>,
    /// em, cluster, random or none
    #[arg(long)]
    pub strategy: Option<Strategy>,
    /// kl, mse, l1 or cosine
    #[arg(long)]
    pub loss: Option<ReconstructionLossKind>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long)]
    pub em_iters: Option<usize>,
    #[arg(long)]
    pub kmeans_iters: Option<usize>,
    #[arg(long)]
    pub corpus_cap: Option<usize>,
    #[arg(long)]
    pub use_vga: Option<bool>,
    #[arg(long)]
    pub accumulate: Option<usize>,
    #[arg(long)]
    pub standardize_genomic: Option<bool>,
}

impl TrainArgs {
    pub fn resolve(&self) -> anyhow::Result<TrainConfig> {
        let mut c = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading {}", path.display()))?;
                serde_json::from_str(&text).map_err(|e| {
                    histosurv_core::Error::Config(format!("{}: {e}", path.display()))
                })?
            }
            None => TrainConfig::default(),
        };
        macro_rules! take {
            ($($field:ident),*) => {
                $(if let Some(v) = self.$field { c.$field = v; })*
            };
        }
        take!(
            learning_rate,
            weight_decay,
            epochs,
            lambda_kl,
            n_s,
            n_l,
            c_h,
            strategy,
            loss,
            seed,
            folds,
            em_iters,
            kmeans_iters,
            corpus_cap,
            use_vga,
            accumulate,
            standardize_genomic
        );
        c.validate()?;
        Ok(c)
    }
}
