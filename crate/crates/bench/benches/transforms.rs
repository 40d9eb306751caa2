use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ddlab_core::drawdown::{build_kw_with, DrawdownSpec, KwOptions, TransformPair};
use ddlab_core::montecarlo::simulate_horizons;
use ddlab_core::{ay_transform, CompleteMarketSpec, Policy, SamplePath, SimConfig};
use std::hint::black_box;

fn kw_quadrature(c: &mut Criterion) {
    let forced = KwOptions {
        force_quadrature: true,
        ..Default::default()
    };
    let mut g = c.benchmark_group("build_kw");
    for (name, w) in [
        ("linear", DrawdownSpec::linear(0.5).unwrap()),
        (
            "piecewise",
            DrawdownSpec::piecewise_linear(vec![(1.0, 0.3), (3.0, 1.2)], 0.2).unwrap(),
        ),
    ] {
        g.bench_function(BenchmarkId::new("quadrature_eval", name), |b| {
            b.iter(|| {
                let k = build_kw_with(&w, 1.0, forced).unwrap();
                black_box(k.eval(black_box(250.0)))
            })
        });
    }
    g.finish();
}

fn transform_path(c: &mut Criterion) {
    let n = 10_000;
    let values: Vec<f64> = (0..=n)
        .map(|i| {
            let t = i as f64 / n as f64;
            (0.3 * t + 0.1 * (40.0 * t).sin()).exp()
        })
        .collect();
    let path = SamplePath::uniform(1.0 / n as f64, values).unwrap();
    let mut g = c.benchmark_group("ay_transform");
    for (name, w) in [
        ("linear", DrawdownSpec::linear(0.5).unwrap()),
        (
            "piecewise",
            DrawdownSpec::piecewise_linear(vec![(1.0, 0.3), (3.0, 1.2)], 0.2).unwrap(),
        ),
    ] {
        let pair = TransformPair::new(&w, 1.0).unwrap();
        g.bench_function(name, |b| b.iter(|| ay_transform(&pair.f, black_box(&path)).unwrap()));
    }
    g.finish();
}

fn simulation(c: &mut Criterion) {
    let m = CompleteMarketSpec::from_theta(0.0, 0.3, 0.2).unwrap();
    let cfg = SimConfig {
        n_paths: 2_000,
        dt: 1e-2,
        horizons: vec![2.5, 5.0, 7.5, 10.0],
        seed: 1,
        scheme: Default::default(),
        antithetic: false,
        v0: 1.0,
    };
    let mut g = c.benchmark_group("simulate_horizons");
    g.sample_size(10);
    g.bench_function("exact_at_horizons", |b| {
        b.iter(|| simulate_horizons(&m, &Policy::Merton(0.5), &cfg, false, None).unwrap())
    });
    g.bench_function("grid_with_running_max", |b| {
        b.iter(|| simulate_horizons(&m, &Policy::Merton(0.5), &cfg, true, None).unwrap())
    });
    g.finish();
}

criterion_group!(benches, kw_quadrature, transform_path, simulation);
criterion_main!(benches);
