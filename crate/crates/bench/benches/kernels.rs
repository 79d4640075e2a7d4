use std::collections::HashSet;
use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use stare::encoder::layer_forward_eval;
use stare::graph::EntityId;
use stare::{filtered_rank, phi, PhiKind};
use stare_bench::layer_fixture;

fn composition(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut group = c.benchmark_group("phi");
    for d in [32, 200] {
        let a: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        for kind in [PhiKind::Mult, PhiKind::Ccorr, PhiKind::Rotate] {
            group.bench_with_input(BenchmarkId::new(kind.to_string(), d), &d, |bench, _| {
                bench.iter(|| phi(black_box(&a), black_box(&b), kind).unwrap())
            });
        }
    }
    group.finish();
}

fn encoder_layer(c: &mut Criterion) {
    let mut group = c.benchmark_group("encoder_layer");
    group.sample_size(20);
    for statements in [500, 2000] {
        let f = layer_fixture(statements, 64, 2);
        let layer = &f.encoder.layers()[0];
        group.bench_with_input(BenchmarkId::from_parameter(statements), &statements, |bench, _| {
            bench.iter(|| layer_forward_eval(&f.edges, &f.entities, &f.relations, &f.params, layer, &f.config))
        });
    }
    group.finish();
}

fn ranking(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 50_000;
    let scores: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
    let mask = vec![true; n];
    let known: HashSet<EntityId> = (0..200)
        .map(|_| EntityId(rng.random_range(0..n)))
        .chain([EntityId(7)])
        .collect();
    c.bench_function("filtered_rank_50k", |bench| {
        bench.iter(|| filtered_rank(black_box(&scores), EntityId(7), &known, &mask).unwrap())
    });
}

criterion_group!(benches, composition, encoder_layer, ranking);
criterion_main!(benches);
