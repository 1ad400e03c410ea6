use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use histosurv_bench::default_cohort;
use histosurv_core::clustering::{em_fit, gmm_from_centroids, kmeans, sample_patches};
use histosurv_core::metrics::concordance_index;
use histosurv_core::numerics::matmul;
use histosurv_core::pipeline::{train_fold, TrainConfig};
use histosurv_core::rng::{normal_matrix, seeded};
use histosurv_core::{Graph, Model, ModelDims, ParamStore};

fn bench_matmul(c: &mut Criterion) {
    let mut rng = seeded(1);
    let a = normal_matrix(&mut rng, 96, 32, 1.0);
    let b = normal_matrix(&mut rng, 32, 64, 1.0);
    c.bench_function("matmul 96x32x64", |bench| {
        bench.iter(|| matmul(black_box(&a), black_box(&b)).unwrap())
    });
}

fn bench_train_step(c: &mut Criterion) {
    let cohort = default_cohort();
    let bag = &cohort.patients[0].bag.features;
    let prompts = bag.select_rows(&(0..32).collect::<Vec<_>>());
    let mut store = ParamStore::new();
    let model = Model::init(
        &mut store,
        ModelDims {
            dim: cohort.dim,
            tokens: 16,
        },
        true,
        0,
    );
    c.bench_function("forward+backward one patient", |bench| {
        bench.iter(|| {
            let mut g = Graph::new();
            let nodes = model.forward(&mut g, &store, bag, &prompts).unwrap();
            let loss = g.survival_nll(nodes.logits, 1, false).unwrap();
            g.backward(loss, &mut store);
        })
    });

    let cfg = TrainConfig {
        epochs: 1,
        n_s: 32,
        ..TrainConfig::default()
    };
    let mut group = c.benchmark_group("fold");
    group.sample_size(10);
    group.bench_function("train one epoch", |bench| {
        bench.iter(|| train_fold(&cohort, 0, &cfg).unwrap())
    });
    group.finish();
}

fn bench_em(c: &mut Criterion) {
    let cohort = default_cohort();
    let corpus = sample_patches(cohort.patients.iter().map(|p| &p.bag.features), 5000, 0).unwrap();
    let centroids = kmeans(&corpus, 16, 0, 20).unwrap().centroids;
    let init = gmm_from_centroids(&corpus, &centroids).unwrap();
    let mut group = c.benchmark_group("mixture");
    group.sample_size(10);
    group.bench_function("em_fit 5000x32, 16 components, 10 iters", |bench| {
        bench.iter(|| em_fit(black_box(&corpus), &init, 10).unwrap())
    });
    group.finish();
}

fn bench_concordance(c: &mut Criterion) {
    let mut rng = seeded(2);
    let risks = normal_matrix(&mut rng, 1, 5000, 1.0).into_vec();
    let times: Vec<f64> = normal_matrix(&mut rng, 1, 5000, 1.0)
        .into_vec()
        .iter()
        .map(|v| v.exp())
        .collect();
    let cens: Vec<bool> = (0..5000).map(|i| i % 3 == 0).collect();
    c.bench_function("c-index n=5000", |bench| {
        bench.iter(|| concordance_index(black_box(&risks), &times, &cens).unwrap())
    });
}

criterion_group!(
    benches,
    bench_matmul,
    bench_train_step,
    bench_em,
    bench_concordance
);
criterion_main!(benches);
