//! Learnable query tokens cross-attend over the selected visual prompts to
//! reconstruct a genomic embedding.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Graph, Matrix, NodeId, ParamId, ParamStore};
use crate::rng::{normal_matrix, uniform_matrix};

/// Standard deviation of the normal init for tokens and projections.
pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReconstructionLossKind {
    Kl,
    Mse,
    L1,
    Cosine,
}

impl ReconstructionLossKind {
    pub const ALL: [ReconstructionLossKind; 4] = [Self::Kl, Self::Mse, Self::L1, Self::Cosine];

    pub fn name(self) -> &'static str {
        match self {
            Self::Kl => "kl",
            Self::Mse => "mse",
            Self::L1 => "l1",
            Self::Cosine => "cosine",
        }
    }
}

impl fmt::Display for ReconstructionLossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ReconstructionLossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown reconstruction loss `{s}`")))
    }
}

/// PyTorch-style linear init, uniform in `±1/√fan_in`.
pub(crate) fn linear_init<R: Rng + ?Sized>(
    store: &mut ParamStore,
    rng: &mut R,
    name: &str,
    fan_in: usize,
    fan_out: usize,
) -> (ParamId, ParamId) {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let w = store.add(
        format!("{name}.weight"),
        uniform_matrix(rng, fan_in, fan_out, bound),
    );
    let b = store.add(
        format!("{name}.bias"),
        uniform_matrix(rng, 1, fan_out, bound),
    );
    (w, b)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VgaParams {
    pub tokens: ParamId,
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub mlp_w1: ParamId,
    pub mlp_b1: ParamId,
    pub mlp_w2: ParamId,
    pub mlp_b2: ParamId,
}

#[derive(Debug, Clone, Copy)]
pub struct VgaNodes {
    /// `N_L x d` reconstructed tokens.
    pub tokens: NodeId,
    /// `N_L x N_S` attention weights.
    pub attention: NodeId,
}

impl VgaParams {
    /// Registers the parameters; the MLP hidden width is `2d`.
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        d: usize,
        n_l: usize,
    ) -> Self {
        if n_l == 0 {
            panic!("at least one learnable token is required");
        }
        let tokens = store.add("vga.tokens", normal_matrix(rng, n_l, d, INIT_STD));
        let wq = store.add("vga.wq", normal_matrix(rng, d, d, INIT_STD));
        let wk = store.add("vga.wk", normal_matrix(rng, d, d, INIT_STD));
        let wv = store.add("vga.wv", normal_matrix(rng, d, d, INIT_STD));
        let (mlp_w1, mlp_b1) = linear_init(store, rng, "vga.mlp1", d, 2 * d);
        let (mlp_w2, mlp_b2) = linear_init(store, rng, "vga.mlp2", 2 * d, d);
        Self {
            tokens,
            wq,
            wk,
            wv,
            mlp_w1,
            mlp_b1,
            mlp_w2,
            mlp_b2,
        }
    }

    pub fn dim(&self, store: &ParamStore) -> usize {
        store.value(self.tokens).cols()
    }

    /// `A = softmax(E_L W_Q (E_S W_K)ᵀ / √d)`, `a = GELU(A E_S W_V)`,
    /// output `a + MLP(a)`.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, prompts: NodeId) -> Result<VgaNodes> {
        let d = self.dim(store);
        let tokens = g.param(store, self.tokens);
        let wq = g.param(store, self.wq);
        let wk = g.param(store, self.wk);
        let wv = g.param(store, self.wv);
        let q = g.matmul(tokens, wq)?;
        let k = g.matmul(prompts, wk)?;
        let v = g.matmul(prompts, wv)?;
        let scores = g.matmul_nt(q, k)?;
        let scores = g.scale(scores, 1.0 / (d as f64).sqrt());
        let attention = g.softmax_rows(scores);
        let attended = g.matmul(attention, v)?;
        let a = g.gelu(attended);
        let out = residual_mlp(
            g,
            store,
            a,
            [self.mlp_w1, self.mlp_b1, self.mlp_w2, self.mlp_b2],
        )?;
        Ok(VgaNodes {
            tokens: out,
            attention,
        })
    }

    /// Forward without gradient bookkeeping: `(tokens, attention)`.
    pub fn coattention(&self, store: &ParamStore, prompts: &Matrix) -> Result<(Matrix, Matrix)> {
        let mut g = Graph::new();
        let p = g.constant(prompts.clone());
        let nodes = self.forward(&mut g, store, p)?;
        Ok((
            g.value(nodes.tokens).clone(),
            g.value(nodes.attention).clone(),
        ))
    }
}

/// `x + W2·GELU(W1·x + b1) + b2`, row-wise.
fn residual_mlp(g: &mut Graph, store: &ParamStore, x: NodeId, ids: [ParamId; 4]) -> Result<NodeId> {
    let [w1, b1, w2, b2] = ids.map(|id| g.param(store, id));
    let h = g.matmul(x, w1)?;
    let h = g.add_row(h, b1)?;
    let h = g.gelu(h);
    let h = g.matmul(h, w2)?;
    let h = g.add_row(h, b2)?;
    g.add(x, h)
}

/// Pools the tokens by their mean and compares the result with the 1 x d
/// `target`. `Kl` compares the softmax of both vectors.
pub fn reconstruction_loss(
    g: &mut Graph,
    tokens: NodeId,
    target: NodeId,
    kind: ReconstructionLossKind,
) -> Result<NodeId> {
    let pooled = g.mean_rows(tokens);
    match kind {
        ReconstructionLossKind::Kl => {
            let r = g.softmax_rows(pooled);
            let t = g.softmax_rows(target);
            g.kl(r, t)
        }
        ReconstructionLossKind::Mse => g.mse(pooled, target),
        ReconstructionLossKind::L1 => g.l1(pooled, target),
        ReconstructionLossKind::Cosine => g.cosine_distance(pooled, target),
    }
}

/// Value-only [`reconstruction_loss`] for a token matrix and a target vector.
pub fn reconstruction_loss_value(
    tokens: &Matrix,
    target: &[f64],
    kind: ReconstructionLossKind,
) -> Result<f64> {
    let mut g = Graph::new();
    let t = g.constant(tokens.clone());
    let e = g.constant(Matrix::row_vector(target));
    let loss = reconstruction_loss(&mut g, t, e, kind)?;
    Ok(g.value(loss).item())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::check_gradients;
    use crate::rng::seeded;
    use proptest::prelude::*;

    fn setup(d: usize, n_l: usize, seed: u64) -> (ParamStore, VgaParams) {
        let mut store = ParamStore::new();
        let p = VgaParams::init(&mut store, &mut seeded(seed), d, n_l);
        (store, p)
    }

    #[test]
    fn single_prompt_gets_all_attention() {
        let (store, p) = setup(4, 3, 1);
        let prompt = normal_matrix(&mut seeded(2), 1, 4, 1.0);
        let (tokens, att) = p.coattention(&store, &prompt).unwrap();
        assert_eq!(att, Matrix::filled(3, 1, 1.0));
        // every token sees the same value row, so the outputs agree
        for r in 1..3 {
            assert!(tokens
                .row(r)
                .iter()
                .zip(tokens.row(0))
                .all(|(a, b)| (a - b).abs() < 1e-15));
        }
    }

    #[test]
    fn zero_query_key_gives_uniform_attention() {
        let (mut store, p) = setup(4, 2, 3);
        // zero logits, and a zero MLP branch exposes the pre-MLP output
        for id in [p.wq, p.wk, p.mlp_w2, p.mlp_b2] {
            store.get_mut(id).value.fill(0.0);
        }
        let prompts = normal_matrix(&mut seeded(4), 5, 4, 1.0);
        let (tokens, att) = p.coattention(&store, &prompts).unwrap();
        assert!(att.as_slice().iter().all(|&a| (a - 0.2).abs() < 1e-15));
        let v = crate::numerics::matmul(&prompts, store.value(p.wv))
            .unwrap()
            .mean_rows();
        let expected = crate::numerics::gelu(&v);
        for row in tokens.row_iter() {
            assert!(row
                .iter()
                .zip(expected.row(0))
                .all(|(a, b)| (a - b).abs() < 1e-14));
        }
    }

    #[test]
    fn coattention_gradients_match_finite_differences() {
        let (mut store, p) = setup(4, 3, 5);
        // larger projections so the softmax is not flat
        for id in [p.wq, p.wk, p.wv, p.tokens] {
            let v = normal_matrix(&mut seeded(id.0 as u64 + 9), store.value(id).rows(), 4, 0.6);
            store.get_mut(id).value = v;
        }
        let prompts = normal_matrix(&mut seeded(6), 5, 4, 1.0);
        let target = normal_matrix(&mut seeded(7), 1, 4, 1.0);
        for kind in ReconstructionLossKind::ALL {
            let report = check_gradients(&mut store, 1e-4, |g, s| {
                let e = g.constant(prompts.clone());
                let t = g.constant(target.clone());
                let nodes = p.forward(g, s, e)?;
                reconstruction_loss(g, nodes.tokens, t, kind)
            })
            .unwrap();
            assert!(report.passed(), "{kind}: {report}");
        }
    }

    #[test]
    fn identical_vectors_have_zero_loss() {
        let v = [0.3, -1.0, 2.0, 0.5];
        let tokens = Matrix::from_rows(&[v, v]);
        for kind in ReconstructionLossKind::ALL {
            let l = reconstruction_loss_value(&tokens, &v, kind).unwrap();
            assert!(l.abs() < 1e-15, "{kind}: {l}");
        }
    }

    #[test]
    fn kl_reference_value() {
        let mut a = [0.0; 8];
        let mut b = [0.0; 8];
        a[0] = 1.0;
        b[1] = 1.0;
        let l = reconstruction_loss_value(&Matrix::row_vector(&a), &b, ReconstructionLossKind::Kl)
            .unwrap();
        // mpmath, 40 digits
        assert!((l - 0.176_809_219_858_928_524_728_134_4).abs() < 1e-14);
    }

    #[test]
    fn cosine_zero_vector_guard() {
        let l = reconstruction_loss_value(
            &Matrix::zeros(1, 3),
            &[1.0, 0.0, 0.0],
            ReconstructionLossKind::Cosine,
        )
        .unwrap();
        assert_eq!(l, 1.0);
    }

    #[test]
    fn one_small_step_reduces_kl() {
        let (mut store, p) = setup(6, 4, 11);
        let prompts = normal_matrix(&mut seeded(12), 7, 6, 1.0);
        let target = normal_matrix(&mut seeded(13), 1, 6, 1.0);
        let eval = |store: &mut ParamStore, backprop: bool| {
            let mut g = Graph::new();
            let e = g.constant(prompts.clone());
            let t = g.constant(target.clone());
            let nodes = p.forward(&mut g, store, e).unwrap();
            let loss =
                reconstruction_loss(&mut g, nodes.tokens, t, ReconstructionLossKind::Kl).unwrap();
            if backprop {
                g.backward(loss, store);
            }
            g.value(loss).item()
        };
        let before = eval(&mut store, true);
        let grads: Vec<Matrix> = store.iter().map(|p| p.grad()).collect();
        let mut step = 1e-1;
        let mut improved = false;
        for _ in 0..20 {
            let mut trial = store.clone();
            for (param, grad) in trial.iter_mut().zip(&grads) {
                let update = grad.map(|g| -step * g);
                param.value.add_assign(&update);
            }
            if eval(&mut trial, false) < before {
                improved = true;
                break;
            }
            step *= 0.5;
        }
        assert!(improved);
    }

    #[test]
    fn loss_kind_names_round_trip() {
        for k in ReconstructionLossKind::ALL {
            assert_eq!(k.name().parse::<ReconstructionLossKind>().unwrap(), k);
        }
        assert!("hinge".parse::<ReconstructionLossKind>().is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn attention_rows_sum_to_one(seed in any::<u64>(), n_s in 1usize..12, n_l in 1usize..5) {
            let (store, p) = setup(5, n_l, seed);
            let prompts = normal_matrix(&mut seeded(seed ^ 5), n_s, 5, 3.0);
            let (_, att) = p.coattention(&store, &prompts).unwrap();
            prop_assert_eq!(att.shape(), (n_l, n_s));
            for row in att.row_iter() {
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn kl_is_nonnegative_and_shift_invariant(seed in any::<u64>(), shift in -5.0f64..5.0) {
            let mut rng = seeded(seed);
            let a = normal_matrix(&mut rng, 1, 6, 2.0);
            let b = normal_matrix(&mut rng, 1, 6, 2.0);
            let l = reconstruction_loss_value(&a, b.as_slice(), ReconstructionLossKind::Kl).unwrap();
            prop_assert!(l >= 0.0);
            let shifted: Vec<f64> = b.as_slice().iter().map(|v| v + shift).collect();
            let l2 = reconstruction_loss_value(&a.map(|v| v + shift), &shifted, ReconstructionLossKind::Kl).unwrap();
            prop_assert!((l - l2).abs() < 1e-12);
        }
    }
}
