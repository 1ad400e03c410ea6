//! Reverse-mode differentiation over [`Matrix`] values.
//!
//! A [`Graph`] records every operation of one forward pass. Calling
//! [`Graph::backward`] walks the record in reverse and accumulates
//! gradients into the [`ParamStore`] the parameters were read from.

use super::matrix::{
    self, gelu_derivative, layer_norm_backward, layer_norm_forward, matmul, matmul_nt, matmul_tn,
    sigmoid, softmax_rows, softmax_rows_backward, softplus, LayerNormCache, Matrix, KL_FLOOR,
};
use super::params::{ParamId, ParamStore};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

/// Backward rule for [`Graph::custom`]: `(upstream, inputs) -> input gradients`.
pub type CustomBackward = Box<dyn Fn(&Matrix, &[&Matrix]) -> Vec<Matrix>>;

/// Kernel widths of the pyramid position encoder.
pub const PPEG_KERNELS: [usize; 3] = [7, 5, 3];

/// Smallest argument passed to a logarithm inside the survival likelihood.
pub const SURVIVAL_LOG_FLOOR: f64 = 1e-12;

pub(crate) enum Op {
    Leaf,
    Param(ParamId),
    MatMul(NodeId, NodeId),
    MatMulNt(NodeId, NodeId),
    Add(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    Scale(NodeId, f64),
    Gelu(NodeId),
    SoftmaxRows(NodeId),
    LayerNorm(NodeId, NodeId, NodeId, LayerNormCache),
    ConcatCols(NodeId, NodeId),
    ConcatRows(NodeId, NodeId),
    SliceRows(NodeId, usize),
    MeanRows(NodeId),
    Ppeg([NodeId; 4], usize),
    Kl(NodeId, NodeId),
    Mse(NodeId, NodeId),
    L1(NodeId, NodeId),
    Cosine(NodeId, NodeId),
    SurvivalNll(NodeId, usize, bool),
    SurvivalRisk(NodeId),
    Custom(Vec<NodeId>, CustomBackward),
}

struct Node {
    value: Matrix,
    op: Op,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Matrix, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &Matrix {
        &self.nodes[id.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn constant(&mut self, value: Matrix) -> NodeId {
        self.push(value, Op::Leaf)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> NodeId {
        self.push(store.value(id).clone(), Op::Param(id))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = matmul(self.value(a), self.value(b))?;
        Ok(self.push(v, Op::MatMul(a, b)))
    }

    /// `a · bᵀ`
    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = matmul_nt(self.value(a), self.value(b))?;
        Ok(self.push(v, Op::MatMulNt(a, b)))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::Dimension {
                op: "add",
                left: va.shape(),
                right: vb.shape(),
            });
        }
        let v = va.zip_map(vb, |x, y| x + y);
        Ok(self.push(v, Op::Add(a, b)))
    }

    /// Adds a 1 x cols row to every row of `a`.
    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId> {
        let (va, vr) = (self.value(a), self.value(row));
        if vr.rows() != 1 || vr.cols() != va.cols() {
            return Err(Error::Dimension {
                op: "add_row",
                left: va.shape(),
                right: vr.shape(),
            });
        }
        let mut v = va.clone();
        for i in 0..v.rows() {
            for (x, b) in v.row_mut(i).iter_mut().zip(vr.as_slice()) {
                *x += b;
            }
        }
        Ok(self.push(v, Op::AddRow(a, row)))
    }

    pub fn scale(&mut self, a: NodeId, s: f64) -> NodeId {
        let v = self.value(a).map(|x| x * s);
        self.push(v, Op::Scale(a, s))
    }

    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        let v = matrix::gelu(self.value(a));
        self.push(v, Op::Gelu(a))
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        let v = softmax_rows(self.value(a));
        self.push(v, Op::SoftmaxRows(a))
    }

    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, bias: NodeId) -> Result<NodeId> {
        let (v, cache) = layer_norm_forward(self.value(x), self.value(gain), self.value(bias))?;
        Ok(self.push(v, Op::LayerNorm(x, gain, bias, cache)))
    }

    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.rows() != vb.rows() {
            return Err(Error::Dimension {
                op: "concat_cols",
                left: va.shape(),
                right: vb.shape(),
            });
        }
        let v = Matrix::from_fn(va.rows(), va.cols() + vb.cols(), |i, j| {
            if j < va.cols() {
                va[(i, j)]
            } else {
                vb[(i, j - va.cols())]
            }
        });
        Ok(self.push(v, Op::ConcatCols(a, b)))
    }

    pub fn concat_rows(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.cols() != vb.cols() {
            return Err(Error::Dimension {
                op: "concat_rows",
                left: va.shape(),
                right: vb.shape(),
            });
        }
        let mut data = va.as_slice().to_vec();
        data.extend_from_slice(vb.as_slice());
        let v = Matrix::from_vec(va.rows() + vb.rows(), va.cols(), data)?;
        Ok(self.push(v, Op::ConcatRows(a, b)))
    }

    pub fn slice_rows(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let va = self.value(a);
        if start + len > va.rows() {
            return Err(Error::Dimension {
                op: "slice_rows",
                left: va.shape(),
                right: (start, len),
            });
        }
        let idx: Vec<usize> = (start..start + len).collect();
        let v = va.select_rows(&idx);
        Ok(self.push(v, Op::SliceRows(a, start)))
    }

    pub fn mean_rows(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).mean_rows();
        self.push(v, Op::MeanRows(a))
    }

    /// Pyramid position encoding over the patch tokens of `x` (row 0 is CLS).
    ///
    /// `kernels` hold one row per channel with `k*k` taps each, for the widths
    /// in [`PPEG_KERNELS`].
    pub fn ppeg(&mut self, x: NodeId, kernels: [NodeId; 3]) -> Result<NodeId> {
        let vx = self.value(x);
        let d = vx.cols();
        let n = vx.rows().saturating_sub(1);
        if n == 0 {
            return Err(Error::Encoding(
                "PPEG needs at least one patch token".into(),
            ));
        }
        for (k, &id) in PPEG_KERNELS.iter().zip(&kernels) {
            let kv = self.value(id);
            if kv.shape() != (d, k * k) {
                return Err(Error::Dimension {
                    op: "ppeg",
                    left: (d, k * k),
                    right: kv.shape(),
                });
            }
        }
        let side = ppeg_side(n);
        let grid = ppeg_grid(vx, n, side);
        let mut out = vx.clone();
        for (k, &id) in PPEG_KERNELS.iter().zip(&kernels) {
            let conv = depthwise_conv(&grid, self.value(id), side, *k);
            for p in 0..n {
                for c in 0..d {
                    out[(1 + p, c)] += conv[(p, c)];
                }
            }
        }
        Ok(self.push(out, Op::Ppeg([x, kernels[0], kernels[1], kernels[2]], side)))
    }

    /// `KL(r ∥ g)` for two 1 x d probability rows.
    pub fn kl(&mut self, r: NodeId, g: NodeId) -> Result<NodeId> {
        let v = matrix::kl_divergence(self.value(r).as_slice(), self.value(g).as_slice())?;
        Ok(self.push(Matrix::scalar(v), Op::Kl(r, g)))
    }

    pub fn mse(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = self.same_shape("mse", a, b)?;
        let n = va.len() as f64;
        let v = va
            .as_slice()
            .iter()
            .zip(vb.as_slice())
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            / n;
        Ok(self.push(Matrix::scalar(v), Op::Mse(a, b)))
    }

    pub fn l1(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = self.same_shape("l1", a, b)?;
        let n = va.len() as f64;
        let v = va
            .as_slice()
            .iter()
            .zip(vb.as_slice())
            .map(|(x, y)| (x - y).abs())
            .sum::<f64>()
            / n;
        Ok(self.push(Matrix::scalar(v), Op::L1(a, b)))
    }

    /// `1 − cos(a, b)`; 1 when either norm is below 1e-12.
    pub fn cosine_distance(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = self.same_shape("cosine", a, b)?;
        let v = match cosine_parts(va.as_slice(), vb.as_slice()) {
            Some((dot, na, nb)) => 1.0 - dot / (na * nb),
            None => 1.0,
        };
        Ok(self.push(Matrix::scalar(v), Op::Cosine(a, b)))
    }

    /// Discrete-time survival negative log-likelihood of 1 x K hazard logits.
    pub fn survival_nll(&mut self, logits: NodeId, bin: usize, censored: bool) -> Result<NodeId> {
        let l = self.value(logits);
        if l.rows() != 1 || bin >= l.cols() {
            return Err(Error::Loss(format!(
                "bin {bin} outside hazard logits of shape {:?}",
                l.shape()
            )));
        }
        let v = survival_nll_value(l.as_slice(), bin, censored);
        Ok(self.push(Matrix::scalar(v), Op::SurvivalNll(logits, bin, censored)))
    }

    /// `−Σ_r S(r)` from 1 x K hazard logits.
    pub fn survival_risk(&mut self, logits: NodeId) -> NodeId {
        let v = -survival_curve(self.value(logits).as_slice())
            .iter()
            .sum::<f64>();
        self.push(Matrix::scalar(v), Op::SurvivalRisk(logits))
    }

    /// Operation with a caller-supplied value and backward rule.
    pub fn custom(&mut self, inputs: &[NodeId], value: Matrix, backward: CustomBackward) -> NodeId {
        self.push(value, Op::Custom(inputs.to_vec(), backward))
    }

    fn same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<(&Matrix, &Matrix)> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::Dimension {
                op,
                left: va.shape(),
                right: vb.shape(),
            });
        }
        Ok((va, vb))
    }

    /// Back-propagates from the 1x1 node `loss`, adding parameter gradients
    /// into `store`. Returns the gradient of every node (None if unreached).
    pub fn backward(&self, loss: NodeId, store: &mut ParamStore) -> Vec<Option<Matrix>> {
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        let (r, c) = self.value(loss).shape();
        grads[loss.0] = Some(Matrix::filled(r, c, 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(up) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            for (input, g) in self.local_grads(node, &up) {
                match &mut grads[input.0] {
                    Some(acc) => acc.add_assign(&g),
                    slot @ None => *slot = Some(g),
                }
            }
            if let Op::Param(pid) = node.op {
                store.get_mut(pid).grad_mut().add_assign(&up);
            }
            grads[idx] = Some(up);
        }
        grads
    }

    fn local_grads(&self, node: &Node, up: &Matrix) -> Vec<(NodeId, Matrix)> {
        let v = |id: NodeId| self.value(id);
        match &node.op {
            Op::Leaf | Op::Param(_) => vec![],
            Op::MatMul(a, b) => vec![
                (*a, matmul_nt(up, v(*b)).expect("shape")),
                (*b, matmul_tn(v(*a), up).expect("shape")),
            ],
            Op::MatMulNt(a, b) => vec![
                (*a, matmul(up, v(*b)).expect("shape")),
                (*b, matmul_tn(up, v(*a)).expect("shape")),
            ],
            Op::Add(a, b) => vec![(*a, up.clone()), (*b, up.clone())],
            Op::AddRow(a, row) => vec![(*a, up.clone()), (*row, column_sums(up))],
            Op::Scale(a, s) => vec![(*a, up.map(|x| x * s))],
            Op::Gelu(a) => vec![(*a, v(*a).zip_map(up, |x, g| gelu_derivative(x) * g))],
            Op::SoftmaxRows(a) => vec![(*a, softmax_rows_backward(&node.value, up))],
            Op::LayerNorm(x, gain, bias, cache) => {
                let (dx, dg, db) = layer_norm_backward(cache, v(*gain), up);
                vec![(*x, dx), (*gain, dg), (*bias, db)]
            }
            Op::ConcatCols(a, b) => {
                let ca = v(*a).cols();
                let cb = v(*b).cols();
                let ga = Matrix::from_fn(up.rows(), ca, |i, j| up[(i, j)]);
                let gb = Matrix::from_fn(up.rows(), cb, |i, j| up[(i, ca + j)]);
                vec![(*a, ga), (*b, gb)]
            }
            Op::ConcatRows(a, b) => {
                let ra = v(*a).rows();
                let rb = v(*b).rows();
                let ga = up.select_rows(&(0..ra).collect::<Vec<_>>());
                let gb = up.select_rows(&(ra..ra + rb).collect::<Vec<_>>());
                vec![(*a, ga), (*b, gb)]
            }
            Op::SliceRows(a, start) => {
                let va = v(*a);
                let mut g = Matrix::zeros(va.rows(), va.cols());
                for i in 0..up.rows() {
                    g.row_mut(start + i).copy_from_slice(up.row(i));
                }
                vec![(*a, g)]
            }
            Op::MeanRows(a) => {
                let va = v(*a);
                let n = va.rows() as f64;
                let g = Matrix::from_fn(va.rows(), va.cols(), |_, j| up[(0, j)] / n);
                vec![(*a, g)]
            }
            Op::Ppeg(inputs, side) => self.ppeg_backward(inputs, *side, up),
            Op::Kl(r, g) => {
                let s = up.item();
                let (vr, vg) = (v(*r), v(*g));
                let dr = vr.zip_map(vg, |p, q| {
                    if p <= 0.0 {
                        0.0
                    } else {
                        s * ((p / q.max(KL_FLOOR)).ln() + 1.0)
                    }
                });
                let dg = vr.zip_map(vg, |p, q| if q < KL_FLOOR { 0.0 } else { -s * p / q });
                vec![(*r, dr), (*g, dg)]
            }
            Op::Mse(a, b) => {
                let s = up.item() * 2.0 / v(*a).len() as f64;
                let da = v(*a).zip_map(v(*b), |x, y| s * (x - y));
                let db = da.map(|x| -x);
                vec![(*a, da), (*b, db)]
            }
            Op::L1(a, b) => {
                let s = up.item() / v(*a).len() as f64;
                let da = v(*a).zip_map(v(*b), |x, y| {
                    if x > y {
                        s
                    } else if x < y {
                        -s
                    } else {
                        0.0
                    }
                });
                let db = da.map(|x| -x);
                vec![(*a, da), (*b, db)]
            }
            Op::Cosine(a, b) => {
                let s = up.item();
                let (va, vb) = (v(*a), v(*b));
                match cosine_parts(va.as_slice(), vb.as_slice()) {
                    None => vec![
                        (*a, Matrix::zeros(va.rows(), va.cols())),
                        (*b, Matrix::zeros(vb.rows(), vb.cols())),
                    ],
                    Some((dot, na, nb)) => {
                        let cos = dot / (na * nb);
                        let da = va.zip_map(vb, |x, y| -s * (y / (na * nb) - cos * x / (na * na)));
                        let db = vb.zip_map(va, |y, x| -s * (x / (na * nb) - cos * y / (nb * nb)));
                        vec![(*a, da), (*b, db)]
                    }
                }
            }
            Op::SurvivalNll(l, bin, censored) => {
                let g = survival_nll_grad(v(*l).as_slice(), *bin, *censored);
                vec![(*l, Matrix::row_vector(&g).map(|x| x * up.item()))]
            }
            Op::SurvivalRisk(l) => {
                let g = survival_risk_grad(v(*l).as_slice());
                vec![(*l, Matrix::row_vector(&g).map(|x| x * up.item()))]
            }
            Op::Custom(inputs, backward) => {
                let vals: Vec<&Matrix> = inputs.iter().map(|&i| v(i)).collect();
                inputs.iter().copied().zip(backward(up, &vals)).collect()
            }
        }
    }

    fn ppeg_backward(
        &self,
        inputs: &[NodeId; 4],
        side: usize,
        up: &Matrix,
    ) -> Vec<(NodeId, Matrix)> {
        let x = self.value(inputs[0]);
        let n = x.rows() - 1;
        let d = x.cols();
        let m = side * side;
        let grid = ppeg_grid(x, n, side);
        // gradient w.r.t. the padded grid; padded output positions are dropped
        let mut dout = Matrix::zeros(m, d);
        for p in 0..n {
            dout.row_mut(p).copy_from_slice(up.row(1 + p));
        }
        let mut dgrid = dout.clone();
        let mut result = Vec::with_capacity(4);
        let mut kernel_grads = Vec::with_capacity(3);
        for (slot, k) in PPEG_KERNELS.iter().enumerate() {
            let kernel = self.value(inputs[1 + slot]);
            let (dg, dk) = depthwise_conv_backward(&grid, kernel, &dout, side, *k);
            dgrid.add_assign(&dg);
            kernel_grads.push((inputs[1 + slot], dk));
        }
        let mut dx = Matrix::zeros(n + 1, d);
        dx.row_mut(0).copy_from_slice(up.row(0));
        for q in 0..m {
            let src = q % n;
            let row = dgrid.row(q);
            for (o, g) in dx.row_mut(1 + src).iter_mut().zip(row) {
                *o += g;
            }
        }
        result.push((inputs[0], dx));
        result.extend(kernel_grads);
        result
    }
}

fn column_sums(m: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(1, m.cols());
    for r in m.row_iter() {
        for (o, v) in out.as_mut_slice().iter_mut().zip(r) {
            *o += v;
        }
    }
    out
}

fn cosine_parts(a: &[f64], b: &[f64]) -> Option<(f64, f64, f64)> {
    let na = matrix::dot(a, a).sqrt();
    let nb = matrix::dot(b, b).sqrt();
    if na < 1e-12 || nb < 1e-12 {
        None
    } else {
        Some((matrix::dot(a, b), na, nb))
    }
}

/// Side of the square grid holding `n` patch tokens.
pub fn ppeg_side(n: usize) -> usize {
    let mut side = (n as f64).sqrt().ceil() as usize;
    while side * side < n {
        side += 1;
    }
    while side > 1 && (side - 1) * (side - 1) >= n {
        side -= 1;
    }
    side
}

/// Patch tokens laid out on a `side x side` grid (row-major), with the
/// tail padded by repeating leading tokens.
fn ppeg_grid(x: &Matrix, n: usize, side: usize) -> Matrix {
    let d = x.cols();
    let m = side * side;
    let mut grid = Matrix::zeros(m, d);
    for q in 0..m {
        grid.row_mut(q).copy_from_slice(x.row(1 + q % n));
    }
    grid
}

/// Zero-padded "same" depthwise cross-correlation over a square grid.
fn depthwise_conv(grid: &Matrix, kernel: &Matrix, side: usize, k: usize) -> Matrix {
    let d = grid.cols();
    let r = (k / 2) as isize;
    let s = side as isize;
    let mut out = Matrix::zeros(grid.rows(), d);
    for i in 0..s {
        for j in 0..s {
            let p = (i * s + j) as usize;
            for a in 0..k as isize {
                let ii = i + a - r;
                if ii < 0 || ii >= s {
                    continue;
                }
                for b in 0..k as isize {
                    let jj = j + b - r;
                    if jj < 0 || jj >= s {
                        continue;
                    }
                    let q = (ii * s + jj) as usize;
                    let tap = (a * k as isize + b) as usize;
                    let src = grid.row(q);
                    let dst = out.row_mut(p);
                    for c in 0..d {
                        dst[c] += kernel[(c, tap)] * src[c];
                    }
                }
            }
        }
    }
    out
}

fn depthwise_conv_backward(
    grid: &Matrix,
    kernel: &Matrix,
    dout: &Matrix,
    side: usize,
    k: usize,
) -> (Matrix, Matrix) {
    let d = grid.cols();
    let r = (k / 2) as isize;
    let s = side as isize;
    let mut dgrid = Matrix::zeros(grid.rows(), d);
    let mut dk = Matrix::zeros(kernel.rows(), kernel.cols());
    for i in 0..s {
        for j in 0..s {
            let p = (i * s + j) as usize;
            let g = dout.row(p);
            if g.iter().all(|&v| v == 0.0) {
                continue;
            }
            for a in 0..k as isize {
                let ii = i + a - r;
                if ii < 0 || ii >= s {
                    continue;
                }
                for b in 0..k as isize {
                    let jj = j + b - r;
                    if jj < 0 || jj >= s {
                        continue;
                    }
                    let q = (ii * s + jj) as usize;
                    let tap = (a * k as isize + b) as usize;
                    for c in 0..d {
                        dk[(c, tap)] += g[c] * grid[(q, c)];
                        dgrid[(q, c)] += g[c] * kernel[(c, tap)];
                    }
                }
            }
        }
    }
    (dgrid, dk)
}

/// `S(r) = Π_{u≤r} (1 − σ(l_u))` for every bin.
pub fn survival_curve(logits: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    logits
        .iter()
        .map(|&l| {
            acc -= softplus(l);
            acc.exp()
        })
        .collect()
}

fn clamp_neg_log(v: f64) -> f64 {
    v.min(-SURVIVAL_LOG_FLOOR.ln())
}

/// Uses `−ln(1 − σ(l)) = softplus(l)` and `−ln σ(l) = softplus(−l)`.
pub(crate) fn survival_nll_value(logits: &[f64], bin: usize, censored: bool) -> f64 {
    if censored {
        clamp_neg_log(logits[..=bin].iter().map(|&l| softplus(l)).sum())
    } else {
        let before: f64 = logits[..bin].iter().map(|&l| softplus(l)).sum();
        clamp_neg_log(before) + clamp_neg_log(softplus(-logits[bin]))
    }
}

fn survival_nll_grad(logits: &[f64], bin: usize, censored: bool) -> Vec<f64> {
    let cap = -SURVIVAL_LOG_FLOOR.ln();
    let mut g = vec![0.0; logits.len()];
    let upto = if censored { bin + 1 } else { bin };
    let total: f64 = logits[..upto].iter().map(|&l| softplus(l)).sum();
    if total < cap {
        for u in 0..upto {
            g[u] = sigmoid(logits[u]);
        }
    }
    if !censored && softplus(-logits[bin]) < cap {
        g[bin] = -sigmoid(-logits[bin]);
    }
    g
}

fn survival_risk_grad(logits: &[f64]) -> Vec<f64> {
    let s = survival_curve(logits);
    (0..logits.len())
        .map(|u| sigmoid(logits[u]) * s[u..].iter().sum::<f64>())
        .collect()
}
