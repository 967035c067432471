//! Timings for the network passes, the discrepancy and one guided step.

use std::hint::black_box;

use confill_bench::Fixture;
use confill_core::cad::{cad_grad, cad_total};
use confill_core::confill::{ConFill, ConFillConfig, Discrepancy, GammaTable, Guide};
use confill_core::features::FeatureExtractor;
use confill_core::rng;
use confill_core::{CellGrid, FeatureConfig, NoisePredictor, Weighting};
use criterion::{criterion_group, criterion_main, Criterion};

fn network(c: &mut Criterion) {
    let f = Fixture::new();
    let cot = f.image.map(|v| v - 0.5);
    c.bench_function("forward 32x32", |b| b.iter(|| f.net.forward(black_box(&f.image), 100).unwrap()));
    c.bench_function("vjp 32x32", |b| {
        b.iter(|| f.net.vjp_input(black_box(&f.image), 100, &cot).unwrap())
    });
}

fn discrepancy(c: &mut Criterion) {
    let f = Fixture::new();
    let ex = FeatureExtractor::new(FeatureConfig::default()).unwrap();
    let grid = CellGrid::build(&ex, &f.image, Some(&f.mask), 0, Weighting::Adaptive, None).unwrap();
    let x = f.image.map(|v| 1.0 - v);
    c.bench_function("cad value", |b| {
        b.iter(|| cad_total(black_box(&x), &f.image, &grid, &ex, None).unwrap())
    });
    c.bench_function("cad gradient", |b| {
        b.iter(|| cad_grad(black_box(&x), &f.image, &grid, &ex, None).unwrap())
    });
}

fn refine(c: &mut Criterion) {
    let f = Fixture::new();
    let feats = FeatureConfig::default();
    let cfg = ConFillConfig::default();
    let guide = Guide::new(Discrepancy::Cad, &feats, &f.image, &f.mask, 0, None).unwrap();
    let eval = guide.evaluator().unwrap();
    let gamma = GammaTable::constant(f.sched.timesteps(), 0.1).unwrap();
    let sampler = ConFill {
        net: &f.net,
        sched: &f.sched,
        features: &feats,
        cfg: &cfg,
        kind: Discrepancy::Cad,
        external: None,
    };
    let x_t = f.image.map(|v| 2.0 * v - 1.0);
    let eps = f.net.predict(&x_t, 100).unwrap();
    c.bench_function("refine step", |b| {
        let mut stream = rng::stream(0, "bench");
        b.iter(|| sampler.refine_step(&eval, &gamma, &x_t, &eps, 100, &mut stream).unwrap())
    });
}

criterion_group!(benches, network, discrepancy, refine);
criterion_main!(benches);
