use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use glassy_core::couplings::CouplingModel;
use glassy_core::dynamics::{ensemble_average, EnsembleTask, GridSpec, Observable};
use glassy_core::ensemble::BallGeometry;
use glassy_core::Execution;

fn task(n: usize) -> EnsembleTask {
    let g = BallGeometry::with_disorder(3, 1.0, n, 0.01).unwrap();
    let mut t = EnsembleTask::new(
        g,
        n,
        CouplingModel::isotropic(6.0, 1.0).unwrap(),
        vec![Observable::Magnetization, Observable::Purity],
    );
    t.grid = GridSpec::NnUnits { min: 1e-2, max: 1e2, points: 200 };
    t
}

fn execution_modes(c: &mut Criterion) {
    let mut group = c.benchmark_group("ensemble_average");
    group.sample_size(10);
    for n in [100, 400] {
        let t = task(n);
        for (name, exec) in [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)] {
            group.bench_with_input(BenchmarkId::new(name, n), &t, |b, t| {
                b.iter(|| ensemble_average(t, 16, 7, exec).unwrap())
            });
        }
    }
    group.finish();
}

criterion_group!(benches, execution_modes);
criterion_main!(benches);
