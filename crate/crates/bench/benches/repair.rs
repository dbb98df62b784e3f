use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use neurepair_bench::repair_fixture;
use neurepair_core::localization::localize;
use neurepair_core::pso::{
    fitness, repair, BaseLosses, FitnessConfig, FitnessVariant, SwarmConfig,
};

fn nn(c: &mut Criterion) {
    let f = repair_fixture(500, 3);
    let layer = f.model.last_layer();
    c.bench_function("forward/500", |b| {
        b.iter(|| f.model.forward(black_box(&f.i_pos)).unwrap())
    });
    c.bench_function("weight_gradients/500", |b| {
        b.iter(|| {
            f.model
                .weight_gradients(black_box(&f.i_pos), layer)
                .unwrap()
        })
    });
}

fn localization(c: &mut Criterion) {
    let f = repair_fixture(500, 3);
    c.bench_function("localize/n_g=16", |b| {
        b.iter(|| localize(black_box(&f.table), 16).unwrap())
    });
}

fn search(c: &mut Criterion) {
    let f = repair_fixture(500, 3);
    let cfg = FitnessConfig::new(FitnessVariant::NegRatio, 8.0, true);
    let base = BaseLosses::compute(&f.model, &f.i_neg, &f.i_pos).unwrap();
    c.bench_function("fitness/500", |b| {
        b.iter(|| fitness(black_box(&f.model), &f.i_neg, &f.i_pos, base, &cfg).unwrap())
    });

    let swarm = SwarmConfig {
        n_iterations: 20,
        ..SwarmConfig::new(20, 1)
    };
    let mut group = c.benchmark_group("repair");
    group.sample_size(10);
    group.bench_function("p20x20", |b| {
        b.iter(|| repair(&f.model, &f.localized, &f.i_neg, &f.i_pos, &cfg, &swarm).unwrap())
    });
    group.finish();
}

criterion_group!(benches, nn, localization, search);
criterion_main!(benches);
