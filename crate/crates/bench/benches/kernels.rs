use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ndarray::Array1;
use quadfeat::sphere::gegenbauer_all;
use quadfeat::training::{RidgeProblem, StepBudget, TrainConfig};
use quadfeat::universality::sliced_w1;
use quadfeat::{init_network, make_sign_features, make_standard_target, sample_sphere, stage1_step, ActivationSpec, Dataset};

fn gegenbauer(c: &mut Criterion) {
    c.bench_function("gegenbauer_all k<=8 d=16", |b| b.iter(|| gegenbauer_all(8, 16, std::hint::black_box(3.7))));
}

fn inner_layer(c: &mut Criterion) {
    let d = 16;
    let spec = ActivationSpec::default_q2(d);
    let theta = init_network(d, 64, 2048, 0.01, 1, &spec).unwrap();
    let x = sample_sphere(d, 1024, 2).unwrap();
    let dense = theta.inner.clone().dense_only();
    let mut g = c.benchmark_group("h0 n=1024 m2=2048");
    g.bench_function("lifted", |b| b.iter(|| theta.inner.h0_rows(x.rows()).unwrap()));
    g.bench_function("dense", |b| b.iter(|| dense.h0_rows(x.rows()).unwrap()));
    g.finish();
}

fn stage1(c: &mut Criterion) {
    let d = 16;
    let spec = ActivationSpec::default_q2(d);
    let f = make_sign_features(d).unwrap();
    let t = make_standard_target(d, 2, &f, 1 << 14, 3).unwrap();
    let theta = init_network(d, 256, 1024, 1e-3, 4, &spec).unwrap();
    let d1 = Dataset::draw(&t, 4096, 5).unwrap();
    c.bench_function("stage1 d=16 m1=256 m2=1024 n1=4096", |b| b.iter(|| stage1_step(&theta, &d1).unwrap()));
}

fn universality(c: &mut Criterion) {
    let mut g = c.benchmark_group("sliced_w1 n=20000 L=16");
    g.sample_size(10);
    for d in [16usize, 64] {
        let f = make_sign_features(d).unwrap();
        g.bench_with_input(BenchmarkId::from_parameter(d), &f, |b, f| b.iter(|| sliced_w1(f, 20_000, 16, 6).unwrap()));
    }
    g.finish();
}

fn ridge(c: &mut Criterion) {
    let mut r = quadfeat::rng::rng(7);
    let (n, m) = (2048, 256);
    let feats = ndarray::Array2::from_shape_fn((n, m), |_| rand::Rng::random_range(&mut r, -1.0..1.0));
    let y = Array1::from_shape_fn(n, |i| (i as f64).sin());
    let prob = RidgeProblem::from_features(feats.view(), y.view());
    let lambda = 1e-2 * prob.second_moment();
    let mut g = c.benchmark_group("ridge m1=256");
    g.bench_function("cholesky", |b| b.iter(|| prob.solve(lambda).unwrap()));
    let cfg = TrainConfig { budget: StepBudget::Steps(2000), grad_tol: 0.0, ..TrainConfig::default() };
    g.bench_function("gd 2000 steps", |b| b.iter(|| prob.fit(Array1::zeros(m).view(), lambda, &cfg).unwrap()));
    g.finish();
}

criterion_group!(benches, gegenbauer, inner_layer, stage1, universality, ridge);
criterion_main!(benches);
