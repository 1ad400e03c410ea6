use super::*;
use crate::error::Result;
use crate::rng::{normal_matrix, seeded};

fn store_with(mats: &[(&str, Matrix)]) -> (ParamStore, Vec<ParamId>) {
    let mut store = ParamStore::new();
    let ids = mats.iter().map(|(n, m)| store.add(*n, m.clone())).collect();
    (store, ids)
}

/// Reduces any node to a scalar through a fixed random projection so every
/// output entry influences the loss with a distinct weight.
fn project(g: &mut Graph, x: NodeId, seed: u64) -> Result<NodeId> {
    let (r, c) = g.value(x).shape();
    let w = normal_matrix(&mut seeded(seed), c, 1, 1.0);
    let w = g.constant(w);
    let y = g.matmul(x, w)?;
    let ones = g.constant(Matrix::filled(1, r, 1.0));
    g.matmul(ones, y)
}

#[test]
fn matmul_forward_matches_entry_sums_and_gradient_matches_fd() {
    let mut rng = seeded(11);
    let a = normal_matrix(&mut rng, 3, 4, 1.0);
    let b = normal_matrix(&mut rng, 4, 2, 1.0);
    let c = matmul(&a, &b).unwrap();
    for i in 0..3 {
        for j in 0..2 {
            let mut s = 0.0;
            for k in 0..4 {
                s += a[(i, k)] * b[(k, j)];
            }
            assert!((c[(i, j)] - s).abs() < 1e-14);
        }
    }
    let (mut store, ids) = store_with(&[("a", a), ("b", b)]);
    let report = check_gradients(&mut store, 1e-6, |g, s| {
        let a = g.param(s, ids[0]);
        let b = g.param(s, ids[1]);
        let c = g.matmul(a, b)?;
        let sq = g.gelu(c);
        project(g, sq, 3)
    })
    .unwrap();
    assert!(report.passed(), "{report}");
}

#[test]
fn matmul_nt_gradient() {
    let mut rng = seeded(12);
    let (mut store, ids) = store_with(&[
        ("a", normal_matrix(&mut rng, 3, 5, 1.0)),
        ("b", normal_matrix(&mut rng, 4, 5, 1.0)),
    ]);
    let report = check_gradients(&mut store, 1e-4, |g, s| {
        let a = g.param(s, ids[0]);
        let b = g.param(s, ids[1]);
        let c = g.matmul_nt(a, b)?;
        project(g, c, 4)
    })
    .unwrap();
    assert!(report.passed(), "{report}");
}

#[test]
fn softmax_gelu_layer_norm_gradients() {
    for (seed, (rows, cols)) in [(1u64, (2usize, 3usize)), (2, (4, 6)), (3, (1, 9))] {
        let mut rng = seeded(seed);
        let (mut store, ids) = store_with(&[
            ("x", normal_matrix(&mut rng, rows, cols, 1.5)),
            ("gain", normal_matrix(&mut rng, 1, cols, 1.0)),
            ("bias", normal_matrix(&mut rng, 1, cols, 1.0)),
        ]);
        let report = check_gradients(&mut store, 1e-4, |g, s| {
            let x = g.param(s, ids[0]);
            let gain = g.param(s, ids[1]);
            let bias = g.param(s, ids[2]);
            let ln = g.layer_norm(x, gain, bias)?;
            let act = g.gelu(ln);
            let sm = g.softmax_rows(act);
            project(g, sm, seed + 10)
        })
        .unwrap();
        assert!(report.passed(), "{report}");
    }
}

#[test]
fn structural_op_gradients() {
    let mut rng = seeded(21);
    let (mut store, ids) = store_with(&[
        ("a", normal_matrix(&mut rng, 3, 4, 1.0)),
        ("b", normal_matrix(&mut rng, 3, 2, 1.0)),
        ("row", normal_matrix(&mut rng, 1, 6, 1.0)),
        ("c", normal_matrix(&mut rng, 2, 6, 1.0)),
    ]);
    let report = check_gradients(&mut store, 1e-4, |g, s| {
        let a = g.param(s, ids[0]);
        let b = g.param(s, ids[1]);
        let row = g.param(s, ids[2]);
        let c = g.param(s, ids[3]);
        let ab = g.concat_cols(a, b)?;
        let abc = g.concat_rows(ab, c)?;
        let shifted = g.add_row(abc, row)?;
        let mid = g.slice_rows(shifted, 1, 3)?;
        let scaled = g.scale(mid, 0.7);
        let sq = g.gelu(scaled);
        let m = g.mean_rows(sq);
        let m2 = g.add(m, row)?;
        project(g, m2, 9)
    })
    .unwrap();
    assert!(report.passed(), "{report}");
}

#[test]
fn reconstruction_loss_gradients() {
    let mut rng = seeded(31);
    let (mut store, ids) = store_with(&[
        ("a", normal_matrix(&mut rng, 1, 7, 1.0)),
        ("b", normal_matrix(&mut rng, 1, 7, 1.0)),
    ]);
    type LossOp = fn(&mut Graph, NodeId, NodeId) -> Result<NodeId>;
    let ops: [(&str, LossOp); 4] = [
        ("kl", |g, a, b| {
            let r = g.softmax_rows(a);
            let q = g.softmax_rows(b);
            g.kl(r, q)
        }),
        ("mse", |g, a, b| g.mse(a, b)),
        ("l1", |g, a, b| g.l1(a, b)),
        ("cosine", |g, a, b| g.cosine_distance(a, b)),
    ];
    for (name, op) in ops {
        let report = check_gradients(&mut store, 1e-4, |g, s| {
            let a = g.param(s, ids[0]);
            let b = g.param(s, ids[1]);
            op(g, a, b)
        })
        .unwrap();
        assert!(report.passed(), "{name}: {report}");
    }
}

#[test]
fn survival_op_gradients() {
    let mut rng = seeded(41);
    let (mut store, ids) = store_with(&[("l", normal_matrix(&mut rng, 1, 4, 1.5))]);
    for bin in 0..4 {
        for censored in [false, true] {
            let report = check_gradients(&mut store, 1e-4, |g, s| {
                let l = g.param(s, ids[0]);
                g.survival_nll(l, bin, censored)
            })
            .unwrap();
            assert!(report.passed(), "bin {bin} censored {censored}: {report}");
        }
    }
    let report = check_gradients(&mut store, 1e-4, |g, s| {
        let l = g.param(s, ids[0]);
        Ok(g.survival_risk(l))
    })
    .unwrap();
    assert!(report.passed(), "{report}");
}

#[test]
fn ppeg_doubles_a_two_by_two_grid_with_identity_center_tap() {
    let mut store = ParamStore::new();
    let k7 = store.add("k7", Matrix::zeros(1, 49));
    let k5 = store.add("k5", Matrix::zeros(1, 25));
    let mut center = Matrix::zeros(1, 9);
    center[(0, 4)] = 1.0;
    let k3 = store.add("k3", center);
    let mut g = Graph::new();
    let x = g.constant(Matrix::from_rows(&[[9.0], [1.0], [2.0], [3.0], [4.0]]));
    let ks = [
        g.param(&store, k7),
        g.param(&store, k5),
        g.param(&store, k3),
    ];
    let y = g.ppeg(x, ks).unwrap();
    assert_eq!(g.value(y).as_slice(), &[9.0, 2.0, 4.0, 6.0, 8.0]);
}

#[test]
fn ppeg_zero_kernels_are_identity() {
    let mut store = ParamStore::new();
    let ks: Vec<_> = PPEG_KERNELS
        .iter()
        .map(|k| store.add("k", Matrix::zeros(3, k * k)))
        .collect();
    let x = normal_matrix(&mut seeded(5), 8, 3, 1.0);
    let mut g = Graph::new();
    let xn = g.constant(x.clone());
    let kn = [
        g.param(&store, ks[0]),
        g.param(&store, ks[1]),
        g.param(&store, ks[2]),
    ];
    let y = g.ppeg(xn, kn).unwrap();
    assert_eq!(g.value(y), &x);
}

#[test]
fn ppeg_gradients_with_padding() {
    // 6 patch tokens -> 3x3 grid with 3 padded duplicates
    for n in [1usize, 4, 6, 10] {
        let mut rng = seeded(50 + n as u64);
        let d = 2;
        let mut mats = vec![("x", normal_matrix(&mut rng, n + 1, d, 1.0))];
        for k in PPEG_KERNELS {
            mats.push(("k", normal_matrix(&mut rng, d, k * k, 0.3)));
        }
        let (mut store, ids) = store_with(&mats);
        let report = check_gradients(&mut store, 1e-4, |g, s| {
            let x = g.param(s, ids[0]);
            let ks = [g.param(s, ids[1]), g.param(s, ids[2]), g.param(s, ids[3])];
            let y = g.ppeg(x, ks)?;
            let y = g.gelu(y);
            project(g, y, 77)
        })
        .unwrap();
        assert!(report.passed(), "n={n}: {report}");
    }
}

#[test]
fn ppeg_grid_side() {
    assert_eq!(ppeg_side(1), 1);
    assert_eq!(ppeg_side(4), 2);
    assert_eq!(ppeg_side(5), 3);
    assert_eq!(ppeg_side(9), 3);
    assert_eq!(ppeg_side(10), 4);
}

#[test]
fn linear_layer_with_mse_passes_gradcheck() {
    let mut rng = seeded(61);
    let x = normal_matrix(&mut rng, 5, 3, 1.0);
    let target = normal_matrix(&mut rng, 5, 2, 1.0);
    let (mut store, ids) = store_with(&[
        ("w", normal_matrix(&mut rng, 3, 2, 0.5)),
        ("b", normal_matrix(&mut rng, 1, 2, 0.5)),
    ]);
    let report = check_gradients(&mut store, 1e-4, |g, s| {
        let x = g.constant(x.clone());
        let t = g.constant(target.clone());
        let w = g.param(s, ids[0]);
        let b = g.param(s, ids[1]);
        let y = g.matmul(x, w)?;
        let y = g.add_row(y, b)?;
        g.mse(y, t)
    })
    .unwrap();
    assert!(report.passed(), "{report}");
    assert_eq!(report.checked, 8);
}

#[test]
fn sign_flipped_backward_is_reported() {
    let mut rng = seeded(62);
    let x = normal_matrix(&mut rng, 4, 3, 1.0);
    let target = normal_matrix(&mut rng, 4, 2, 1.0);
    let (mut store, ids) = store_with(&[("w", normal_matrix(&mut rng, 3, 2, 0.5))]);
    let report = check_gradients(&mut store, 1e-4, |g, s| {
        let xn = g.constant(x.clone());
        let t = g.constant(target.clone());
        let w = g.param(s, ids[0]);
        let value = matmul(g.value(xn), g.value(w))?;
        let broken = g.custom(
            &[xn, w],
            value,
            Box::new(|up, inputs| {
                let dx = matmul_nt(up, inputs[1]).unwrap();
                let dw = matmul_tn(inputs[0], up).unwrap().map(|v| -v);
                vec![dx, dw]
            }),
        );
        g.mse(broken, t)
    })
    .unwrap();
    assert!(!report.passed());
    assert_eq!(report.violations.len(), 6);
    assert!(report.violations.iter().all(|v| v.param == "w"));
}

#[test]
fn parameter_gradients_reset_to_zero() {
    let (mut store, ids) = store_with(&[("w", Matrix::filled(2, 2, 1.0))]);
    let mut g = Graph::new();
    let w = g.param(&store, ids[0]);
    let ones = g.constant(Matrix::filled(1, 2, 1.0));
    let y = g.matmul(ones, w).unwrap();
    let t = g.constant(Matrix::zeros(1, 2));
    let loss = g.mse(y, t).unwrap();
    g.backward(loss, &mut store);
    assert!(store
        .get(ids[0])
        .grad()
        .as_slice()
        .iter()
        .any(|&v| v != 0.0));
    store.zero_grad();
    assert!(store
        .get(ids[0])
        .grad()
        .as_slice()
        .iter()
        .all(|&v| v == 0.0));
    assert_eq!(store.get(ids[0]).grad().shape(), (2, 2));
}
