use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use nalgebra::DMatrix;

use linsde::flow::integrate_flow_with_gradient;
use linsde::linearisation::{covariance_by_quadrature, default_panels, propagate_covariance};
use linsde::ode::DEFAULT_RTOL;
use linsde::sde_sampler::sample_coupled;
use linsde::sensitivity::{s2_field, s2_point};
use linsde::{builtin_model, GridAxis, InitialCondition, ModelSpec, SimulationConfig};

fn flow(c: &mut Criterion) {
    let jet = builtin_model(&ModelSpec::new("meandering_jet")).unwrap();
    c.bench_function("flow_with_gradient/jet", |b| {
        b.iter(|| integrate_flow_with_gradient(jet.as_ref(), black_box(&[0.0, 1.0]), 1.0, DEFAULT_RTOL).unwrap())
    });
}

fn covariance(c: &mut Criterion) {
    let jet = builtin_model(&ModelSpec::new("meandering_jet")).unwrap();
    let zero = DMatrix::zeros(2, 2);
    let mut g = c.benchmark_group("covariance/jet");
    g.bench_function("lyapunov_ode", |b| {
        b.iter(|| propagate_covariance(jet.as_ref(), black_box(&[0.0, 1.0]), 1.0, 1.0, &zero, DEFAULT_RTOL).unwrap())
    });
    g.bench_function("quadrature", |b| {
        b.iter(|| covariance_by_quadrature(jet.as_ref(), black_box(&[0.0, 1.0]), 1.0, default_panels(1.0)).unwrap())
    });
    g.bench_function("s2_point", |b| {
        b.iter(|| s2_point(jet.as_ref(), black_box(&[0.0, 1.0]), 1.0).unwrap())
    });
    g.finish();
}

fn sampler(c: &mut Criterion) {
    let mut g = c.benchmark_group("sample_coupled");
    g.sample_size(10);
    for name in ["sine", "meandering_jet"] {
        let m = builtin_model(&ModelSpec::new(name)).unwrap();
        let x0 = if m.dim_state() == 1 { vec![0.5] } else { vec![0.0, 1.0] };
        let init = InitialCondition::fixed(&x0);
        let cfg = SimulationConfig::new(1.0, 500, 1);
        g.bench_with_input(BenchmarkId::from_parameter(name), &cfg, |b, cfg| {
            b.iter(|| sample_coupled(m.as_ref(), &init, 0.01, cfg).unwrap())
        });
    }
    g.finish();
}

fn field(c: &mut Criterion) {
    let jet = builtin_model(&ModelSpec::new("meandering_jet")).unwrap();
    let axes = [GridAxis::new(0.0, 3.0, 20), GridAxis::new(0.0, 3.0, 20)];
    let mut g = c.benchmark_group("s2_field/jet_20x20");
    g.sample_size(10);
    for workers in [1, 2] {
        g.bench_with_input(BenchmarkId::from_parameter(workers), &workers, |b, &w| {
            b.iter(|| s2_field(jet.as_ref(), &axes, 1.0, w).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, flow, covariance, sampler, field);
criterion_main!(benches);
