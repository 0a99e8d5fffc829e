use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use zdgan_core::ids::{self, Labeled, TreeConfig};
use zdgan_core::trainer::{self, Architecture, GanBundle, TrainConfig, Variant};
use zdgan_core::{metrics, toy, Tensor};

fn random(rows: usize, cols: usize, seed: u64) -> Tensor {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    Tensor::new(vec![rows, cols], (0..rows * cols).map(|_| r.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn gemm(c: &mut Criterion) {
    let mut group = c.benchmark_group("gemm");
    for n in [64, 128, 256] {
        let a = random(n, n, 1);
        let b = random(n, n, 2);
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |bch, _| bch.iter(|| a.matmul(black_box(&b)).unwrap()));
    }
    group.finish();
}

fn critic_step(c: &mut Criterion) {
    let data = toy::ring8(2048, 3);
    let mut group = c.benchmark_group("critic_step");
    for variant in [Variant::Plain, Variant::SaJs] {
        let cfg = TrainConfig { variant, batch_size: 128, latent_dim: 8, ..TrainConfig::default() };
        let mut bundle = GanBundle::new(&cfg, &Architecture::compact(32), 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        group.bench_function(variant.as_str(), |b| {
            b.iter(|| trainer::critic_step(&mut bundle, &data, &cfg, &mut rng).unwrap())
        });
    }
    group.finish();
}

fn mmd(c: &mut Criterion) {
    let mut group = c.benchmark_group("mmd2_median");
    for n in [250, 1000] {
        let x = toy::ring8(n, 5);
        let y = toy::uniform(n, 2, 6);
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| b.iter(|| metrics::mmd2_median(&x, &y).unwrap()));
    }
    group.finish();
}

fn tree(c: &mut Criterion) {
    let x = random(4000, 16, 7);
    let targets: Vec<usize> = x.iter_rows().map(|r| usize::from(r[0] + r[3] > 0.0) + usize::from(r[5] > 0.5)).collect();
    let cfg = TreeConfig::default();
    c.bench_function("tree/4000x16", |b| {
        b.iter(|| ids::train_tree(Labeled::new(&x, &targets, 3).unwrap(), &cfg).unwrap())
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = gemm, critic_step, mmd, tree
}
criterion_main!(benches);
