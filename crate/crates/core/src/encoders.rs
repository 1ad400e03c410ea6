//! Transformer encoders that summarise a token sequence into a CLS vector.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Graph, Matrix, NodeId, ParamId, ParamStore, PPEG_KERNELS};
use crate::rng::uniform_matrix;

/// Pre-norm single-head self-attention with a residual connection:
/// `x + softmax(QKᵀ/√d) V W_O` where `Q, K, V` project `LN(x)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttentionBlock {
    pub ln_gain: ParamId,
    pub ln_bias: ParamId,
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
}

#[derive(Debug, Clone, Copy)]
pub struct BlockNodes {
    pub out: NodeId,
    /// `(N+1) x (N+1)` attention weights.
    pub attention: NodeId,
}

impl AttentionBlock {
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        d: usize,
    ) -> Self {
        let bound = 1.0 / (d as f64).sqrt();
        Self {
            ln_gain: store.add(format!("{name}.ln.gain"), Matrix::filled(1, d, 1.0)),
            ln_bias: store.add(format!("{name}.ln.bias"), Matrix::zeros(1, d)),
            wq: store.add(format!("{name}.wq"), uniform_matrix(rng, d, d, bound)),
            wk: store.add(format!("{name}.wk"), uniform_matrix(rng, d, d, bound)),
            wv: store.add(format!("{name}.wv"), uniform_matrix(rng, d, d, bound)),
            wo: store.add(format!("{name}.wo"), uniform_matrix(rng, d, d, bound)),
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: NodeId) -> Result<BlockNodes> {
        let d = store.value(self.wq).rows();
        let gain = g.param(store, self.ln_gain);
        let bias = g.param(store, self.ln_bias);
        let h = g.layer_norm(x, gain, bias)?;
        let [wq, wk, wv, wo] = [self.wq, self.wk, self.wv, self.wo].map(|id| g.param(store, id));
        let q = g.matmul(h, wq)?;
        let k = g.matmul(h, wk)?;
        let v = g.matmul(h, wv)?;
        let scores = g.matmul_nt(q, k)?;
        let scores = g.scale(scores, 1.0 / (d as f64).sqrt());
        let attention = g.softmax_rows(scores);
        let mixed = g.matmul(attention, v)?;
        let projected = g.matmul(mixed, wo)?;
        let out = g.add(x, projected)?;
        Ok(BlockNodes { out, attention })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct EncoderNodes {
    /// `1 x d` final CLS state.
    pub cls: NodeId,
    /// Attention matrix of the last block; row 0 is the CLS row.
    pub attention: NodeId,
}

fn prepend_cls(g: &mut Graph, store: &ParamStore, cls: ParamId, tokens: NodeId) -> Result<NodeId> {
    if g.value(tokens).rows() == 0 {
        return Err(Error::Encoding(
            "cannot encode an empty token sequence".into(),
        ));
    }
    let c = g.param(store, cls);
    g.concat_rows(c, tokens)
}

/// Self-attention, pyramid position encoding, self-attention.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathologyEncoder {
    pub cls: ParamId,
    pub first: AttentionBlock,
    /// Depthwise kernels, one `d x k²` matrix per width in [`PPEG_KERNELS`].
    pub ppeg: [ParamId; 3],
    pub second: AttentionBlock,
}

impl PathologyEncoder {
    pub fn init<R: Rng + ?Sized>(store: &mut ParamStore, rng: &mut R, d: usize) -> Self {
        let cls = store.add("path.cls", Matrix::zeros(1, d));
        let first = AttentionBlock::init(store, rng, "path.block1", d);
        let ppeg = PPEG_KERNELS.map(|k| {
            let bound = 1.0 / k as f64;
            store.add(
                format!("path.ppeg{k}"),
                uniform_matrix(rng, d, k * k, bound),
            )
        });
        let second = AttentionBlock::init(store, rng, "path.block2", d);
        Self {
            cls,
            first,
            ppeg,
            second,
        }
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        patches: NodeId,
    ) -> Result<EncoderNodes> {
        let x = prepend_cls(g, store, self.cls, patches)?;
        let x = self.first.forward(g, store, x)?.out;
        let kernels = self.ppeg.map(|id| g.param(store, id));
        let x = g.ppeg(x, kernels)?;
        let last = self.second.forward(g, store, x)?;
        let cls = g.slice_rows(last.out, 0, 1)?;
        Ok(EncoderNodes {
            cls,
            attention: last.attention,
        })
    }

    /// CLS vector and the final layer's CLS attention over the patches.
    pub fn encode(&self, store: &ParamStore, patches: &Matrix) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut g = Graph::new();
        let p = g.constant(patches.clone());
        let nodes = self.forward(&mut g, store, p)?;
        Ok((
            g.value(nodes.cls).as_slice().to_vec(),
            g.value(nodes.attention).row(0)[1..].to_vec(),
        ))
    }
}

/// Two self-attention blocks; no positional information.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenomicEncoder {
    pub cls: ParamId,
    pub first: AttentionBlock,
    pub second: AttentionBlock,
}

impl GenomicEncoder {
    pub fn init<R: Rng + ?Sized>(store: &mut ParamStore, rng: &mut R, d: usize) -> Self {
        Self {
            cls: store.add("gen.cls", Matrix::zeros(1, d)),
            first: AttentionBlock::init(store, rng, "gen.block1", d),
            second: AttentionBlock::init(store, rng, "gen.block2", d),
        }
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        tokens: NodeId,
    ) -> Result<EncoderNodes> {
        let x = prepend_cls(g, store, self.cls, tokens)?;
        let x = self.first.forward(g, store, x)?.out;
        let last = self.second.forward(g, store, x)?;
        let cls = g.slice_rows(last.out, 0, 1)?;
        Ok(EncoderNodes {
            cls,
            attention: last.attention,
        })
    }

    pub fn encode(&self, store: &ParamStore, tokens: &Matrix) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let t = g.constant(tokens.clone());
        let nodes = self.forward(&mut g, store, t)?;
        Ok(g.value(nodes.cls).as_slice().to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::check_gradients;
    use crate::rng::{normal_matrix, seeded};
    use proptest::prelude::*;

    fn zero(store: &mut ParamStore, ids: &[ParamId]) {
        for &id in ids {
            store.get_mut(id).value.fill(0.0);
        }
    }

    fn reversed(m: &Matrix) -> Matrix {
        let idx: Vec<usize> = (0..m.rows()).rev().collect();
        m.select_rows(&idx)
    }

    /// Scalar read-out that touches every CLS coordinate differently.
    fn readout(g: &mut Graph, cls: NodeId, d: usize) -> Result<NodeId> {
        let w = g.constant(Matrix::from_fn(d, 1, |i, _| 0.3 + 0.1 * i as f64));
        let s = g.matmul(cls, w)?;
        let t = g.constant(Matrix::scalar(0.7));
        g.mse(s, t)
    }

    #[test]
    fn zero_output_projection_is_identity() {
        let mut store = ParamStore::new();
        let block = AttentionBlock::init(&mut store, &mut seeded(1), "b", 4);
        zero(&mut store, &[block.wo]);
        let x = normal_matrix(&mut seeded(2), 3, 4, 1.0);
        let mut g = Graph::new();
        let n = g.constant(x.clone());
        let out = block.forward(&mut g, &store, n).unwrap().out;
        assert_eq!(g.value(out), &x);
    }

    #[test]
    fn cls_only_sequence_is_defined() {
        let mut store = ParamStore::new();
        let block = AttentionBlock::init(&mut store, &mut seeded(1), "b", 4);
        let mut g = Graph::new();
        let n = g.constant(normal_matrix(&mut seeded(3), 1, 4, 1.0));
        let nodes = block.forward(&mut g, &store, n).unwrap();
        assert_eq!(g.value(nodes.attention), &Matrix::filled(1, 1, 1.0));
        assert!(g.value(nodes.out).is_finite());
    }

    #[test]
    fn block_gradients_match_finite_differences() {
        let mut store = ParamStore::new();
        let block = AttentionBlock::init(&mut store, &mut seeded(4), "b", 4);
        let gain = normal_matrix(&mut seeded(5), 1, 4, 0.3).map(|v| v + 1.0);
        store.get_mut(block.ln_gain).value = gain;
        let x = normal_matrix(&mut seeded(6), 5, 4, 1.0);
        let report = check_gradients(&mut store, 1e-4, |g, s| {
            let n = g.constant(x.clone());
            let out = block.forward(g, s, n)?.out;
            let cls = g.slice_rows(out, 0, 1)?;
            readout(g, cls, 4)
        })
        .unwrap();
        assert!(report.passed(), "{report}");
    }

    #[test]
    fn residual_identity_on_cls_when_branches_are_zero() {
        let d = 4;
        let mut store = ParamStore::new();
        let mut rng = seeded(7);
        let path = PathologyEncoder::init(&mut store, &mut rng, d);
        let gen = GenomicEncoder::init(&mut store, &mut rng, d);
        let cls = normal_matrix(&mut rng, 1, d, 1.0);
        store.get_mut(path.cls).value = cls.clone();
        store.get_mut(gen.cls).value = cls.clone();
        let mut zeroed = vec![path.first.wo, path.second.wo, gen.first.wo, gen.second.wo];
        zeroed.extend(path.ppeg);
        zero(&mut store, &zeroed);
        let x = normal_matrix(&mut rng, 6, d, 1.0);
        assert_eq!(path.encode(&store, &x).unwrap().0, cls.as_slice());
        assert_eq!(gen.encode(&store, &x).unwrap(), cls.as_slice());
    }

    #[test]
    fn zero_kernels_make_pathology_order_invariant() {
        let d = 4;
        let mut store = ParamStore::new();
        let path = PathologyEncoder::init(&mut store, &mut seeded(8), d);
        zero(&mut store, &path.ppeg);
        let x = normal_matrix(&mut seeded(9), 7, d, 1.0);
        let (a, _) = path.encode(&store, &x).unwrap();
        let (b, _) = path.encode(&store, &reversed(&x)).unwrap();
        for (u, v) in a.iter().zip(&b) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn single_patch_and_single_token_are_defined() {
        let d = 4;
        let mut store = ParamStore::new();
        let mut rng = seeded(10);
        let path = PathologyEncoder::init(&mut store, &mut rng, d);
        let gen = GenomicEncoder::init(&mut store, &mut rng, d);
        let x = normal_matrix(&mut rng, 1, d, 1.0);
        let (cls, att) = path.encode(&store, &x).unwrap();
        assert!(cls.iter().all(|v| v.is_finite()));
        assert_eq!(att.len(), 1);
        assert!(gen
            .encode(&store, &x)
            .unwrap()
            .iter()
            .all(|v| v.is_finite()));
        assert!(matches!(
            path.encode(&store, &Matrix::zeros(0, d)),
            Err(Error::Encoding(_))
        ));
    }

    #[test]
    fn encoder_gradients_match_finite_differences() {
        let d = 3;
        let mut store = ParamStore::new();
        let mut rng = seeded(11);
        let path = PathologyEncoder::init(&mut store, &mut rng, d);
        let gen = GenomicEncoder::init(&mut store, &mut rng, d);
        for id in [path.cls, gen.cls] {
            store.get_mut(id).value = normal_matrix(&mut rng, 1, d, 0.5);
        }
        // 5 patches pad to a 3x3 grid
        let x = normal_matrix(&mut rng, 5, d, 1.0);
        let report = check_gradients(&mut store, 1e-3, |g, s| {
            let n = g.constant(x.clone());
            let p = path.forward(g, s, n)?.cls;
            let q = gen.forward(g, s, n)?.cls;
            let both = g.concat_cols(p, q)?;
            readout(g, both, 2 * d)
        })
        .unwrap();
        assert!(report.passed(), "{report}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn genomic_encoder_is_permutation_invariant(seed in any::<u64>(), n in 1usize..8) {
            let d = 4;
            let mut store = ParamStore::new();
            let gen = GenomicEncoder::init(&mut store, &mut seeded(seed), d);
            let x = normal_matrix(&mut seeded(seed ^ 1), n, d, 1.0);
            let a = gen.encode(&store, &x).unwrap();
            let b = gen.encode(&store, &reversed(&x)).unwrap();
            for (u, v) in a.iter().zip(&b) {
                prop_assert!((u - v).abs() < 1e-12);
            }
        }
    }
}
