//! Training, evaluation, cross-validation and ablation over a cohort.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::clustering::{em_fit, gmm_from_centroids, kmeans, sample_patches, Centroids, GmmModel};
use crate::dataio::{BinCuts, Cohort, Patient, SurvivalRecord};
use crate::error::{Error, Result};
use crate::ese::{select, SelectionResult, Strategy};
use crate::metrics::{concordance_index, format_mean_std, mean_std};
use crate::model::{forward_risk, Mode, Model, ModelDims};
use crate::numerics::{Graph, Matrix, ParamStore};
use crate::rng::{derive_seed, seeded};
use crate::survival::risk_table_text;
use crate::vga::{reconstruction_loss, ReconstructionLossKind};

// Stream labels for derived seeds.
const STREAM_INIT: u64 = 1;
const STREAM_CORPUS: u64 = 2;
const STREAM_KMEANS: u64 = 3;
const STREAM_SELECT: u64 = 4;
const STREAM_SHUFFLE: u64 = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub lambda_kl: f64,
    pub n_s: usize,
    pub n_l: usize,
    pub c_h: usize,
    pub strategy: Strategy,
    pub loss: ReconstructionLossKind,
    pub seed: u64,
    pub folds: usize,
    pub em_iters: usize,
    pub kmeans_iters: usize,
    /// Most patches sampled from the training split to fit the mixture.
    pub corpus_cap: usize,
    pub use_vga: bool,
    /// Patients whose gradients are summed before each update.
    pub accumulate: usize,
    /// Standardise genomic targets per dimension with training-split moments.
    pub standardize_genomic: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 2e-4,
            weight_decay: 1e-5,
            epochs: 30,
            lambda_kl: 1.0,
            n_s: 256,
            n_l: 16,
            c_h: 16,
            strategy: Strategy::Em,
            loss: ReconstructionLossKind::Kl,
            seed: 0,
            folds: 5,
            em_iters: 10,
            kmeans_iters: 50,
            corpus_cap: 50_000,
            use_vga: true,
            accumulate: 1,
            standardize_genomic: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("learning_rate", self.learning_rate),
            ("n_s", self.n_s as f64),
            ("n_l", self.n_l as f64),
            ("c_h", self.c_h as f64),
            ("folds", self.folds as f64),
            ("kmeans_iters", self.kmeans_iters as f64),
            ("corpus_cap", self.corpus_cap as f64),
            ("accumulate", self.accumulate as f64),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [
            ("weight_decay", self.weight_decay),
            ("lambda_kl", self.lambda_kl),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!(
                    "{name} must be non-negative, got {v}"
                )));
            }
        }
        if self.folds < 2 {
            return Err(Error::Config("need at least 2 folds".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        sha256_hex(
            serde_json::to_string(self)
                .expect("config serialises")
                .as_bytes(),
        )
    }

    /// The configuration with pathology features only: no selection and no
    /// reconstruction branch.
    pub fn visual_only(&self) -> Self {
        Self {
            strategy: Strategy::None,
            use_vga: false,
            lambda_kl: 0.0,
            ..self.clone()
        }
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
}

/// Adam moments with decoupled weight decay.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64, weight_decay: f64) -> Self {
        let zeros = || -> Vec<Matrix> {
            store
                .iter()
                .map(|p| Matrix::zeros(p.value.rows(), p.value.cols()))
                .collect()
        };
        Self {
            lr,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// Applies one update from the accumulated gradients, then clears them.
    pub fn step(&mut self, store: &mut ParamStore) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (k, p) in store.iter_mut().enumerate() {
            let Some(grad) = &p.gradient else {
                continue;
            };
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for (i, &g) in grad.as_slice().iter().enumerate() {
                let mi = &mut m.as_mut_slice()[i];
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * g;
                let vi = &mut v.as_mut_slice()[i];
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * g * g;
                let update = (*mi / bc1) / ((*vi / bc2).sqrt() + self.eps);
                let w = &mut p.value.as_mut_slice()[i];
                *w -= self.lr * (update + self.weight_decay * *w);
            }
        }
        store.zero_grad();
    }
}

/// Where the fold's mixture came from; lists only training patients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmProvenance {
    /// `None` when fitted on the whole cohort.
    pub fold: Option<usize>,
    pub train_ids: Vec<String>,
    pub corpus_rows: usize,
    pub kmeans_degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenomicScaling {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl GenomicScaling {
    fn apply(&self, e: &[f64]) -> Vec<f64> {
        e.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixtureFit {
    /// Absent when `with_em` is false.
    pub gmm: Option<GmmModel>,
    pub centroids: Centroids,
    pub provenance: GmmProvenance,
}

/// Samples a patch corpus from the given patients, clusters it with
/// k-means++ and optionally refines a diagonal mixture with EM.
pub fn fit_mixture(
    cohort: &Cohort,
    patients: &[usize],
    fold: Option<usize>,
    config: &TrainConfig,
    with_em: bool,
) -> Result<MixtureFit> {
    let stream = (fold.map_or(u64::MAX, |f| f as u64)) << 8;
    let corpus = sample_patches(
        patients.iter().map(|&i| &cohort.patients[i].bag.features),
        config.corpus_cap,
        derive_seed(config.seed, STREAM_CORPUS ^ stream),
    )?;
    let fit = kmeans(
        &corpus,
        config.c_h,
        derive_seed(config.seed, STREAM_KMEANS ^ stream),
        config.kmeans_iters,
    )?;
    let gmm = if with_em {
        let init = gmm_from_centroids(&corpus, &fit.centroids)?;
        Some(em_fit(&corpus, &init, config.em_iters)?.model)
    } else {
        None
    };
    Ok(MixtureFit {
        gmm,
        provenance: GmmProvenance {
            fold,
            train_ids: patients
                .iter()
                .map(|&i| cohort.patients[i].id().to_string())
                .collect(),
            corpus_rows: corpus.rows(),
            kmeans_degenerate: fit.centroids.degenerate,
        },
        centroids: fit.centroids,
    })
}

/// Everything fitted on a fold's training split before gradient descent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldArtifacts {
    pub fold: usize,
    pub bin_cuts: BinCuts,
    /// Serialised as the packed `[π, μ, σ²]` matrix.
    #[serde(with = "gmm_serde")]
    pub gmm: Option<GmmModel>,
    pub centroids: Option<Matrix>,
    pub provenance: Option<GmmProvenance>,
    pub genomic_scaling: Option<GenomicScaling>,
}

mod gmm_serde {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(
        g: &Option<GmmModel>,
        s: S,
    ) -> std::result::Result<S::Ok, S::Error> {
        g.as_ref().map(GmmModel::to_matrix).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        d: D,
    ) -> std::result::Result<Option<GmmModel>, D::Error> {
        let m: Option<Matrix> = Option::deserialize(d)?;
        m.map(|m| GmmModel::from_matrix(&m).map_err(serde::de::Error::custom))
            .transpose()
    }
}

impl FoldArtifacts {
    /// Fits bin cuts, the mixture (or centroids) and genomic moments on the
    /// training split of `fold`.
    pub fn fit(cohort: &Cohort, fold: usize, config: &TrainConfig) -> Result<Self> {
        let (train, _) = cohort.split(fold);
        if train.is_empty() || train.len() == cohort.len() {
            return Err(Error::Config(format!("fold {fold} has an empty split")));
        }
        let records: Vec<SurvivalRecord> = train
            .iter()
            .map(|&i| cohort.patients[i].survival.clone())
            .collect();
        let bin_cuts = BinCuts::from_records(&records)?;

        let needs_mixture =
            config.use_vga && matches!(config.strategy, Strategy::Em | Strategy::Cluster);
        let (gmm, centroids, provenance) = if needs_mixture {
            let fit = fit_mixture(
                cohort,
                &train,
                Some(fold),
                config,
                config.strategy == Strategy::Em,
            )?;
            (fit.gmm, Some(fit.centroids.vectors), Some(fit.provenance))
        } else {
            (None, None, None)
        };

        let genomic_scaling = if config.standardize_genomic {
            let rows: Vec<&[f64]> = train
                .iter()
                .filter_map(|&i| cohort.patients[i].genomic.as_ref())
                .map(|g| g.embedding.as_slice())
                .collect();
            if rows.is_empty() {
                None
            } else {
                let n = rows.len() as f64;
                let d = cohort.dim;
                let mean: Vec<f64> = (0..d)
                    .map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n)
                    .collect();
                let std = (0..d)
                    .map(|j| {
                        let var = rows.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n;
                        var.sqrt().max(1e-8)
                    })
                    .collect();
                Some(GenomicScaling { mean, std })
            }
        } else {
            None
        };

        Ok(Self {
            fold,
            bin_cuts,
            gmm,
            centroids,
            provenance,
            genomic_scaling,
        })
    }

    /// Visual prompts for one patient. `position` is the patient's index
    /// in the cohort and only seeds the random parts of the selection.
    pub fn select(
        &self,
        config: &TrainConfig,
        bag: &Matrix,
        position: usize,
    ) -> Result<SelectionResult> {
        let strategy = if config.use_vga {
            config.strategy
        } else {
            Strategy::None
        };
        let centroids = self.centroids.as_ref().map(|v| Centroids {
            vectors: v.clone(),
            degenerate: false,
        });
        let n_s = config.n_s.min(bag.rows());
        select(
            strategy,
            bag,
            self.gmm.as_ref(),
            centroids.as_ref(),
            n_s,
            derive_seed(config.seed, STREAM_SELECT ^ ((position as u64) << 8)),
        )
    }

    fn target(&self, patient: &Patient) -> Option<Vec<f64>> {
        let e = &patient.genomic.as_ref()?.embedding;
        Some(match &self.genomic_scaling {
            Some(s) => s.apply(e),
            None => e.clone(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCheckpoint {
    pub config: TrainConfig,
    pub config_hash: String,
    pub artifacts: FoldArtifacts,
    pub model: Model,
    pub params: ParamStore,
}

impl ModelCheckpoint {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serialises")
    }

    /// SHA-256 of the serialised checkpoint.
    pub fn digest(&self) -> String {
        sha256_hex(self.to_json().as_bytes())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    /// Reads a checkpoint and checks that its stored hash matches its config.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ckpt: Self = serde_json::from_str(&text)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        if ckpt.config.hash() != ckpt.config_hash {
            return Err(Error::Checkpoint(format!(
                "{}: config hash mismatch",
                path.display()
            )));
        }
        if !ckpt
            .params
            .same_layout(&Self::layout(&ckpt.config, ckpt.model.dims))
        {
            return Err(Error::Checkpoint(format!(
                "{}: parameter layout mismatch",
                path.display()
            )));
        }
        Ok(ckpt)
    }

    fn layout(config: &TrainConfig, dims: ModelDims) -> ParamStore {
        let mut store = ParamStore::new();
        Model::init(&mut store, dims, config.use_vga, 0);
        store
    }

    /// Fails unless `config` is the configuration this checkpoint was trained with.
    pub fn ensure_config(&self, config: &TrainConfig) -> Result<()> {
        if config.hash() != self.config_hash {
            return Err(Error::Checkpoint(
                "checkpoint was trained with a different config".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    /// Mean total loss per epoch.
    pub loss: Vec<f64>,
    pub nll: Vec<f64>,
    pub reconstruction: Vec<f64>,
}

/// Trains one fold from a fresh initialisation. `epochs = 0` yields the
/// untrained checkpoint.
pub fn train_fold(
    cohort: &Cohort,
    fold: usize,
    config: &TrainConfig,
) -> Result<(ModelCheckpoint, TrainHistory)> {
    config.validate()?;
    let artifacts = FoldArtifacts::fit(cohort, fold, config)?;
    let (train, _) = cohort.split(fold);
    let dims = ModelDims {
        dim: cohort.dim,
        tokens: config.n_l,
    };
    let mut params = ParamStore::new();
    let model = Model::init(
        &mut params,
        dims,
        config.use_vga,
        derive_seed(config.seed, STREAM_INIT ^ ((fold as u64) << 8)),
    );

    struct Prepared {
        bag: Matrix,
        prompts: Matrix,
        bin: usize,
        censored: bool,
        target: Option<Vec<f64>>,
    }
    let prepared: Vec<Prepared> = train
        .iter()
        .map(|&i| {
            let p = &cohort.patients[i];
            let sel = artifacts.select(config, &p.bag.features, i)?;
            Ok(Prepared {
                prompts: sel.gather(&p.bag.features),
                bag: p.bag.features.clone(),
                bin: artifacts.bin_cuts.bin_of(p.survival.time),
                censored: p.survival.censored,
                target: artifacts.target(p),
            })
        })
        .collect::<Result<_>>()?;

    let mut adam = Adam::new(&params, config.learning_rate, config.weight_decay);
    let mut history = TrainHistory::default();
    let mut order: Vec<usize> = (0..prepared.len()).collect();
    let mut shuffle_rng = seeded(derive_seed(
        config.seed,
        STREAM_SHUFFLE ^ ((fold as u64) << 8),
    ));
    let use_recon = config.use_vga && config.lambda_kl > 0.0;
    for epoch in 0..config.epochs {
        order.shuffle(&mut shuffle_rng);
        let (mut total, mut nll_sum, mut rec_sum, mut rec_n) = (0.0, 0.0, 0.0, 0usize);
        let mut pending = 0;
        for &k in &order {
            let p = &prepared[k];
            let mut g = Graph::new();
            let nodes = model.forward(&mut g, &params, &p.bag, &p.prompts)?;
            let nll = g.survival_nll(nodes.logits, p.bin, p.censored)?;
            let mut loss = nll;
            if let (true, Some(target), Some(tokens)) = (use_recon, &p.target, nodes.recon_tokens) {
                let t = g.constant(Matrix::row_vector(target));
                let rec = reconstruction_loss(&mut g, tokens, t, config.loss)?;
                rec_sum += g.value(rec).item();
                rec_n += 1;
                let weighted = g.scale(rec, config.lambda_kl);
                loss = g.add(nll, weighted)?;
            }
            let value = g.value(loss).item();
            if !value.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    detail: format!("loss {value} on patient {}", cohort.patients[train[k]].id()),
                });
            }
            total += value;
            nll_sum += g.value(nll).item();
            g.backward(loss, &mut params);
            pending += 1;
            if pending == config.accumulate {
                if config.accumulate > 1 {
                    params.scale_grads(1.0 / config.accumulate as f64);
                }
                adam.step(&mut params);
                pending = 0;
            }
        }
        if pending > 0 {
            params.scale_grads(1.0 / pending as f64);
            adam.step(&mut params);
        }
        if let Some(bad) = params.iter().find(|p| !p.value.is_finite()) {
            return Err(Error::Divergence {
                epoch,
                detail: format!("parameter {} is not finite", bad.name),
            });
        }
        let n = prepared.len() as f64;
        history.loss.push(total / n);
        history.nll.push(nll_sum / n);
        history.reconstruction.push(if rec_n > 0 {
            rec_sum / rec_n as f64
        } else {
            0.0
        });
    }

    // Gradients are scratch space and are not persisted.
    params.iter_mut().for_each(|p| p.gradient = None);
    Ok((
        ModelCheckpoint {
            config_hash: config.hash(),
            config: config.clone(),
            artifacts,
            model,
            params,
        },
        history,
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RiskRow {
    pub record: SurvivalRecord,
    pub risk: f64,
    /// Final pathology layer's CLS attention over the bag's patches.
    pub attention: Vec<f64>,
    pub selection: SelectionResult,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldEvaluation {
    pub fold: usize,
    pub c_index: f64,
    pub rows: Vec<RiskRow>,
}

impl FoldEvaluation {
    pub fn risk_table(&self) -> String {
        let rows: Vec<(SurvivalRecord, f64)> = self
            .rows
            .iter()
            .map(|r| (r.record.clone(), r.risk))
            .collect();
        risk_table_text(&rows)
    }
}

/// Scores the fold's test patients from their bags alone.
pub fn evaluate_fold(
    cohort: &Cohort,
    fold: usize,
    ckpt: &ModelCheckpoint,
) -> Result<FoldEvaluation> {
    if ckpt.model.dims.dim != cohort.dim {
        return Err(Error::Dimension {
            op: "evaluate",
            left: (cohort.len(), cohort.dim),
            right: (0, ckpt.model.dims.dim),
        });
    }
    if ckpt.artifacts.fold != fold {
        return Err(Error::Checkpoint(format!(
            "checkpoint was fitted for fold {}, not {fold}",
            ckpt.artifacts.fold
        )));
    }
    let (_, test) = cohort.split(fold);
    let mut rows = Vec::with_capacity(test.len());
    for &i in &test {
        let p = &cohort.patients[i];
        let selection = ckpt.artifacts.select(&ckpt.config, &p.bag.features, i)?;
        let prompts = selection.gather(&p.bag.features);
        let out = forward_risk(
            &ckpt.model,
            &ckpt.params,
            &p.bag.features,
            &prompts,
            Mode::Inference,
        )?;
        let mut record = p.survival.clone();
        record.bin = Some(ckpt.artifacts.bin_cuts.bin_of(record.time));
        rows.push(RiskRow {
            record,
            risk: out.risk,
            attention: out.path_attention,
            selection,
        });
    }
    let risks: Vec<f64> = rows.iter().map(|r| r.risk).collect();
    let times: Vec<f64> = rows.iter().map(|r| r.record.time).collect();
    let cens: Vec<bool> = rows.iter().map(|r| r.record.censored).collect();
    Ok(FoldEvaluation {
        fold,
        c_index: concordance_index(&risks, &times, &cens)?,
        rows,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvResult {
    pub evaluations: Vec<FoldEvaluation>,
    pub histories: Vec<TrainHistory>,
    pub checkpoint_digests: Vec<String>,
}

impl CvResult {
    pub fn c_indices(&self) -> Vec<f64> {
        self.evaluations.iter().map(|e| e.c_index).collect()
    }

    pub fn mean_c_index(&self) -> f64 {
        mean_std(&self.c_indices()).0
    }

    pub fn summary(&self) -> String {
        format_mean_std(&self.c_indices())
    }
}

/// Trains and evaluates every fold of the cohort in order.
pub fn cross_validate(cohort: &Cohort, config: &TrainConfig) -> Result<CvResult> {
    let folds = cohort.num_folds();
    if folds != config.folds {
        return Err(Error::Config(format!(
            "cohort has {folds} folds but the config asks for {}",
            config.folds
        )));
    }
    let mut out = CvResult {
        evaluations: Vec::with_capacity(folds),
        histories: Vec::with_capacity(folds),
        checkpoint_digests: Vec::with_capacity(folds),
    };
    for fold in 0..folds {
        let (ckpt, history) = train_fold(cohort, fold, config)?;
        out.evaluations.push(evaluate_fold(cohort, fold, &ckpt)?);
        out.histories.push(history);
        out.checkpoint_digests.push(ckpt.digest());
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub label: String,
    /// Mean fold C-index for each seed.
    pub per_seed: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationTable {
    pub seeds: Vec<u64>,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn row(&self, label: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.label == label)
    }

    /// Column-aligned table for reading.
    pub fn to_text(&self) -> String {
        let width = self
            .rows
            .iter()
            .map(|r| r.label.len())
            .max()
            .unwrap_or(0)
            .max(6);
        let mut s = format!(
            "{:<width$}  C-index (mean ± std over {} seeds)\n",
            "config",
            self.seeds.len()
        );
        for r in &self.rows {
            let _ = writeln!(s, "{:<width$}  {:.4} ± {:.4}", r.label, r.mean, r.std);
        }
        s
    }

    /// Tab-separated rows with one column per seed.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("label\tmean\tstd");
        for seed in &self.seeds {
            let _ = write!(s, "\tseed_{seed}");
        }
        s.push('\n');
        for r in &self.rows {
            let _ = write!(s, "{}\t{}\t{}", r.label, r.mean, r.std);
            for v in &r.per_seed {
                let _ = write!(s, "\t{v}");
            }
            s.push('\n');
        }
        s
    }
}

/// Cross-validates every labelled config once per seed on the same folds.
/// Each config's own `seed` field is replaced by the run seed.
pub fn run_ablation(
    cohort: &Cohort,
    grid: &[(String, TrainConfig)],
    seeds: &[u64],
) -> Result<AblationTable> {
    let mut rows = Vec::with_capacity(grid.len());
    for (label, config) in grid {
        let per_seed = seeds
            .iter()
            .map(|&seed| {
                let cfg = TrainConfig {
                    seed,
                    ..config.clone()
                };
                Ok(cross_validate(cohort, &cfg)?.mean_c_index())
            })
            .collect::<Result<Vec<f64>>>()?;
        let (mean, std) = mean_std(&per_seed);
        rows.push(AblationRow {
            label: label.clone(),
            per_seed,
            mean,
            std,
        });
    }
    Ok(AblationTable {
        seeds: seeds.to_vec(),
        rows,
    })
}

/// Grid over the selection strategies, labelled by strategy name.
pub fn strategy_grid(base: &TrainConfig) -> Vec<(String, TrainConfig)> {
    Strategy::ALL
        .into_iter()
        .map(|s| {
            (
                s.name().to_string(),
                TrainConfig {
                    strategy: s,
                    ..base.clone()
                },
            )
        })
        .collect()
}

/// Grid over the reconstruction losses, labelled by loss name.
pub fn loss_grid(base: &TrainConfig) -> Vec<(String, TrainConfig)> {
    ReconstructionLossKind::ALL
        .into_iter()
        .map(|k| {
            (
                k.name().to_string(),
                TrainConfig {
                    loss: k,
                    ..base.clone()
                },
            )
        })
        .collect()
}

/// Full model, reconstruction without selection, and neither.
pub fn module_grid(base: &TrainConfig) -> Vec<(String, TrainConfig)> {
    vec![
        ("full".to_string(), base.clone()),
        (
            "vga-only".to_string(),
            TrainConfig {
                strategy: Strategy::None,
                ..base.clone()
            },
        ),
        ("neither".to_string(), base.visual_only()),
    ]
}
