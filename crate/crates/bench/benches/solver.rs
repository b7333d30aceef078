use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use htl_bench::scenario_fixture;
use htl_core::{audit_stability, fit, KernelSpec, LossSpec, SolverConfig};

fn bench_fit(c: &mut Criterion) {
    let mut group = c.benchmark_group("fit");
    for n in [50, 100, 200] {
        let (train, source) = scenario_fixture(n, 1.0, 1);
        for (name, kernel) in [("linear", KernelSpec::linear()), ("gaussian", KernelSpec::gaussian(0.1))] {
            group.bench_with_input(BenchmarkId::new(name, n), &n, |b, _| {
                b.iter(|| fit(&train, &LossSpec::Logistic, &kernel, 1.0, &source, &SolverConfig::default()).unwrap())
            });
        }
    }
    group.finish();
}

fn bench_audit(c: &mut Criterion) {
    let (train, source) = scenario_fixture(50, 1.0, 2);
    let (fresh, _) = scenario_fixture(200, 1.0, 3);
    c.bench_function("audit_stability/n50", |b| {
        b.iter(|| {
            audit_stability(
                &train,
                &fresh,
                &LossSpec::Logistic,
                &KernelSpec::gaussian(0.1),
                1.0,
                &source,
                &SolverConfig::default(),
            )
            .unwrap()
        })
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = bench_fit, bench_audit
}
criterion_main!(benches);
