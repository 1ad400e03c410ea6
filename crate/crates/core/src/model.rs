//! The assembled network: selected prompts reconstruct genomic tokens, both
//! token sets are encoded, and the fused CLS pair drives the survival head.

use serde::{Deserialize, Serialize};

use crate::encoders::{GenomicEncoder, PathologyEncoder};
use crate::error::{Error, Result};
use crate::numerics::{check_gradients, GradCheckReport, Graph, Matrix, NodeId, ParamStore};
use crate::rng::{normal_matrix, seeded};
use crate::survival::{hazards, HazardProfile, SurvivalHead};
use crate::vga::{reconstruction_loss, ReconstructionLossKind, VgaParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub dim: usize,
    pub tokens: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub dims: ModelDims,
    /// When false the reconstruction branch is bypassed and the genomic
    /// half of the fused vector is zero.
    pub use_vga: bool,
    pub vga: VgaParams,
    pub pathology: PathologyEncoder,
    pub genomic: GenomicEncoder,
    pub head: SurvivalHead,
}

#[derive(Debug, Clone, Copy)]
pub struct ForwardNodes {
    pub logits: NodeId,
    pub risk: NodeId,
    pub recon_tokens: Option<NodeId>,
    pub vga_attention: Option<NodeId>,
    pub path_attention: NodeId,
}

/// Whether a real genomic embedding is available to score the
/// reconstruction. The computation of the risk is identical in both.
#[derive(Debug, Clone, Copy)]
pub enum Mode<'a> {
    Train {
        target: &'a [f64],
        kind: ReconstructionLossKind,
    },
    Inference,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RiskOutput {
    pub risk: f64,
    pub profile: HazardProfile,
    pub recon_tokens: Option<Matrix>,
    pub vga_attention: Option<Matrix>,
    /// Final-layer CLS attention over the bag's patches.
    pub path_attention: Vec<f64>,
    /// Only in [`Mode::Train`] with VGA enabled.
    pub reconstruction_loss: Option<f64>,
}

impl Model {
    /// Registers every parameter in `store` in a fixed order.
    pub fn init(store: &mut ParamStore, dims: ModelDims, use_vga: bool, seed: u64) -> Self {
        let mut rng = seeded(seed);
        let vga = VgaParams::init(store, &mut rng, dims.dim, dims.tokens);
        let pathology = PathologyEncoder::init(store, &mut rng, dims.dim);
        let genomic = GenomicEncoder::init(store, &mut rng, dims.dim);
        let head = SurvivalHead::init(store, &mut rng, dims.dim);
        Self {
            dims,
            use_vga,
            vga,
            pathology,
            genomic,
            head,
        }
    }

    fn check_dim(&self, what: &'static str, m: &Matrix) -> Result<()> {
        if m.cols() != self.dims.dim {
            return Err(Error::Dimension {
                op: what,
                left: m.shape(),
                right: (m.rows(), self.dims.dim),
            });
        }
        Ok(())
    }

    /// Records the forward pass for one patient.
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        bag: &Matrix,
        prompts: &Matrix,
    ) -> Result<ForwardNodes> {
        self.check_dim("bag", bag)?;
        let bag_node = g.constant(bag.clone());
        let path = self.pathology.forward(g, store, bag_node)?;
        let (gen_cls, recon_tokens, vga_attention) = if self.use_vga {
            self.check_dim("prompts", prompts)?;
            let p = g.constant(prompts.clone());
            let recon = self.vga.forward(g, store, p)?;
            let gen = self.genomic.forward(g, store, recon.tokens)?;
            (gen.cls, Some(recon.tokens), Some(recon.attention))
        } else {
            (g.constant(Matrix::zeros(1, self.dims.dim)), None, None)
        };
        let fused = g.concat_cols(path.cls, gen_cls)?;
        let logits = self.head.forward(g, store, fused)?;
        let risk = g.survival_risk(logits);
        Ok(ForwardNodes {
            logits,
            risk,
            recon_tokens,
            vga_attention,
            path_attention: path.attention,
        })
    }
}

/// Risk and auxiliary outputs for one bag and its selected prompts.
pub fn forward_risk(
    model: &Model,
    store: &ParamStore,
    bag: &Matrix,
    prompts: &Matrix,
    mode: Mode<'_>,
) -> Result<RiskOutput> {
    let mut g = Graph::new();
    let nodes = model.forward(&mut g, store, bag, prompts)?;
    let reconstruction_loss = match (mode, nodes.recon_tokens) {
        (Mode::Train { target, kind }, Some(tokens)) => {
            let t = g.constant(Matrix::row_vector(target));
            let l = reconstruction_loss(&mut g, tokens, t, kind)?;
            Some(g.value(l).item())
        }
        _ => None,
    };
    let profile = hazards(g.value(nodes.logits).as_slice())?;
    Ok(RiskOutput {
        risk: g.value(nodes.risk).item(),
        profile,
        recon_tokens: nodes.recon_tokens.map(|n| g.value(n).clone()),
        vga_attention: nodes.vga_attention.map(|n| g.value(n).clone()),
        path_attention: g.value(nodes.path_attention).row(0)[1..].to_vec(),
        reconstruction_loss,
    })
}

/// Central-difference check of the full training objective
/// `mean(NLL + λ·KL)` over a random two-patient micro-batch.
pub fn model_gradient_check(
    dims: ModelDims,
    lambda: f64,
    seed: u64,
    tol: f64,
) -> Result<GradCheckReport> {
    let mut store = ParamStore::new();
    let model = Model::init(&mut store, dims, true, seed);
    let mut rng = seeded(seed.wrapping_add(1));
    let batch: Vec<(Matrix, Matrix, Matrix, usize, bool)> =
        [(dims.tokens + 3, 1, false), (dims.tokens + 6, 3, true)]
            .into_iter()
            .map(|(n, bin, censored)| {
                let bag = normal_matrix(&mut rng, n, dims.dim, 1.0);
                let prompts = bag.select_rows(&(0..dims.tokens.min(n)).collect::<Vec<_>>());
                let genomic = normal_matrix(&mut rng, 1, dims.dim, 1.0);
                (bag, prompts, genomic, bin, censored)
            })
            .collect();
    check_gradients(&mut store, tol, |g, s| {
        let mut losses = Vec::with_capacity(batch.len());
        for (bag, prompts, genomic, bin, censored) in &batch {
            let nodes = model.forward(g, s, bag, prompts)?;
            let nll = g.survival_nll(nodes.logits, *bin, *censored)?;
            let target = g.constant(genomic.clone());
            let tokens = nodes.recon_tokens.expect("reconstruction branch enabled");
            let kl = reconstruction_loss(g, tokens, target, ReconstructionLossKind::Kl)?;
            let kl = g.scale(kl, lambda);
            losses.push(g.add(nll, kl)?);
        }
        let mut total = losses[0];
        for &l in &losses[1..] {
            total = g.add(total, l)?;
        }
        Ok(g.scale(total, 1.0 / losses.len() as f64))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(use_vga: bool) -> (ParamStore, Model) {
        let mut store = ParamStore::new();
        let model = Model::init(&mut store, ModelDims { dim: 4, tokens: 2 }, use_vga, 3);
        (store, model)
    }

    #[test]
    fn train_and_inference_give_identical_risk() {
        let (store, model) = small(true);
        let bag = normal_matrix(&mut seeded(1), 6, 4, 1.0);
        let prompts = bag.select_rows(&[0, 2, 5]);
        let target = [0.1, 0.2, -0.3, 0.4];
        let a = forward_risk(
            &model,
            &store,
            &bag,
            &prompts,
            Mode::Train {
                target: &target,
                kind: ReconstructionLossKind::Kl,
            },
        )
        .unwrap();
        let b = forward_risk(&model, &store, &bag, &prompts, Mode::Inference).unwrap();
        assert_eq!(a.risk.to_bits(), b.risk.to_bits());
        assert!(a.reconstruction_loss.is_some() && b.reconstruction_loss.is_none());
    }

    #[test]
    fn zero_kernels_make_risk_order_invariant() {
        let (mut store, model) = small(true);
        for id in model.pathology.ppeg {
            store.get_mut(id).value.fill(0.0);
        }
        let bag = normal_matrix(&mut seeded(2), 7, 4, 1.0);
        let rev: Vec<usize> = (0..7).rev().collect();
        let prompts = bag.select_rows(&[1, 3]);
        let a = forward_risk(&model, &store, &bag, &prompts, Mode::Inference).unwrap();
        let b = forward_risk(
            &model,
            &store,
            &bag.select_rows(&rev),
            &prompts,
            Mode::Inference,
        )
        .unwrap();
        assert!((a.risk - b.risk).abs() < 1e-12);
    }

    #[test]
    fn risk_gradient_through_full_path() {
        let (mut store, model) = small(true);
        let bag = normal_matrix(&mut seeded(4), 5, 4, 1.0);
        let prompts = bag.select_rows(&[0, 4]);
        let report = check_gradients(&mut store, 1e-3, |g, s| {
            Ok(model.forward(g, s, &bag, &prompts)?.risk)
        })
        .unwrap();
        assert!(report.passed(), "{report}");
    }

    #[test]
    fn disabled_vga_ignores_prompts() {
        let (store, model) = small(false);
        let bag = normal_matrix(&mut seeded(5), 4, 4, 1.0);
        let a = forward_risk(&model, &store, &bag, &bag, Mode::Inference).unwrap();
        let b = forward_risk(&model, &store, &bag, &Matrix::zeros(1, 4), Mode::Inference).unwrap();
        assert_eq!(a.risk, b.risk);
        assert!(a.recon_tokens.is_none());
    }

    #[test]
    fn training_objective_gradients() {
        let report = model_gradient_check(ModelDims { dim: 4, tokens: 2 }, 1.0, 9, 1e-3).unwrap();
        assert!(report.passed(), "{report}");
    }
}
