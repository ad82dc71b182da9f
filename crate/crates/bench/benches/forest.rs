use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use hteforest::dgp::OutcomeModel;
use hteforest::forest::Forest;
use hteforest::models::{fit_node, score, ModelFamily};
use hteforest::nuisance::{estimate_profile, NuisanceConfig};
use hteforest_bench::{all_families, fixture, forest_config};

fn node_models(c: &mut Criterion) {
    let mut group = c.benchmark_group("node_fit");
    for fx in all_families(200) {
        let weights = vec![1.0; fx.data.n()];
        group.bench_with_input(BenchmarkId::from_parameter(fx.family), &fx, |b, fx| {
            b.iter(|| {
                let fit = fit_node(fx.family, &fx.data, &weights, &fx.design).unwrap();
                black_box(score(fx.family, &fit.params, &fx.data, &fx.design).unwrap())
            })
        });
    }
    group.finish();
}

fn forests(c: &mut Criterion) {
    let mut group = c.benchmark_group("forest");
    group.sample_size(10);
    let cfg = forest_config(50);
    for fx in all_families(400) {
        group.bench_with_input(BenchmarkId::new("fit", fx.family), &fx, |b, fx| {
            b.iter(|| black_box(Forest::fit(&fx.data, fx.family, &fx.design, &cfg).unwrap()))
        });
    }
    let fx = fixture(OutcomeModel::Normal, ModelFamily::LinearGaussian, 800);
    let forest = Forest::fit(&fx.data, fx.family, &fx.design, &forest_config(100)).unwrap();
    let query = vec![0.5; 10];
    group.bench_function("predict/normal", |b| {
        b.iter(|| black_box(forest.predict_effect(&query).unwrap()))
    });
    group.finish();
}

fn nuisance(c: &mut Criterion) {
    let mut group = c.benchmark_group("nuisance");
    group.sample_size(10);
    for fx in all_families(400) {
        group.bench_with_input(BenchmarkId::from_parameter(fx.family), &fx, |b, fx| {
            b.iter(|| black_box(estimate_profile(&fx.data, fx.family, &NuisanceConfig::default(), 5).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, node_models, forests, nuisance);
criterion_main!(benches);
