use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use dwols_bench::{cohort, wls_problem};
use dwols_core::sim::{simulate_cohort, variant_pipeline, ScenarioConfig};
use dwols_core::terms::linear_terms;
use dwols_core::{analysis_rows, fit_andersen_gill, fit_logistic, solve_wls, Variant};

fn wls(c: &mut Criterion) {
    let mut group = c.benchmark_group("solve_wls");
    for rows in [1_000, 10_000] {
        let (x, y, w) = wls_problem(rows, 6, 3);
        group.bench_with_input(BenchmarkId::from_parameter(rows), &rows, |b, _| {
            b.iter(|| solve_wls(black_box(&x), black_box(&y), black_box(&w)).unwrap())
        });
    }
    group.finish();
}

fn nuisance_models(c: &mut Criterion) {
    let ds = cohort(3, 500);
    let visit_terms = linear_terms(&["A", "Z", "K2", "K3"]);
    c.bench_function("fit_andersen_gill/n=500", |b| {
        b.iter(|| fit_andersen_gill(black_box(&ds), &visit_terms).unwrap())
    });
    let rows = analysis_rows(&ds);
    let treatment_terms = linear_terms(&["K1", "K2", "K3"]);
    c.bench_function("fit_logistic/n=500", |b| {
        b.iter(|| fit_logistic(black_box(&rows), &treatment_terms).unwrap())
    });
}

fn pipelines(c: &mut Criterion) {
    let ds = cohort(3, 500);
    let mut group = c.benchmark_group("pipeline");
    for variant in [Variant::OLS, Variant::DW1] {
        let pipeline = variant_pipeline(variant);
        group.bench_function(variant.as_str(), |b| b.iter(|| pipeline.fit(black_box(&ds)).unwrap()));
    }
    group.finish();

    let config = ScenarioConfig {
        n: 500,
        ..ScenarioConfig::preset(3).unwrap()
    };
    c.bench_function("simulate_cohort/n=500", |b| {
        b.iter(|| simulate_cohort(black_box(&config), 0).unwrap())
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = wls, nuisance_models, pipelines
}
criterion_main!(benches);
