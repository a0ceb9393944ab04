use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;
use stochplate::cell_solver::operator::CellOperator;
use stochplate::cell_solver::{coupled_tensor, RVEGrid, SolverOptions};
use stochplate::cg::LinearOperator;
use stochplate::decomposition::{decompose_mixed, MixedField};
use stochplate::material::{MaterialSpec, MaterialTable};
use stochplate::microstructure::{sample_realization, MicrostructureModel, MicrostructureRealization};
use stochplate::{ExecPolicy, Execution};

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn setup() -> (MicrostructureRealization, MaterialTable) {
    let model = MicrostructureModel::poisson_voronoi(1.0, &[(0, 0.5), (1, 0.5)]);
    let mats = MaterialTable::from_specs(&[
        MaterialSpec { phase_id: 0, mu: 1.0, lambda: 1.0 },
        MaterialSpec { phase_id: 1, mu: 4.0, lambda: 4.0 },
    ])
    .unwrap();
    (sample_realization(&model, 0, 8.0).unwrap(), mats)
}

fn policy(execution: Execution) -> ExecPolicy {
    ExecPolicy {
        execution,
        deterministic: true,
    }
}

fn operator_apply(c: &mut Criterion) {
    let (r, mats) = setup();
    let grid = RVEGrid::new(8.0, 32, 32, 8, 1.0).unwrap();
    let phases = r.rasterize(32, 32).unwrap();
    let mut g = c.benchmark_group("operator_apply_32x32x8");
    for (name, exec) in MODES {
        let op = CellOperator::new(&grid, &phases, &mats, policy(exec)).unwrap();
        let x: Vec<f64> = (0..op.len()).map(|i| (i as f64 * 0.37).sin()).collect();
        let mut y = vec![0.0; op.len()];
        g.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| op.apply(black_box(&x), &mut y)));
    }
    g.finish();
}

fn effective_tensor(c: &mut Criterion) {
    let (r, mats) = setup();
    let grid = RVEGrid::new(8.0, 16, 16, 4, 1.0).unwrap();
    let phases = r.rasterize(16, 16).unwrap();
    let mut g = c.benchmark_group("coupled_tensor_16x16x4");
    g.sample_size(10);
    for (name, exec) in MODES {
        let opts = SolverOptions {
            policy: policy(exec),
            ..SolverOptions::default()
        };
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| coupled_tensor(&grid, &phases, &mats, opts).unwrap())
        });
    }
    g.finish();
}

fn rasterize(c: &mut Criterion) {
    let (r, _) = setup();
    let mut g = c.benchmark_group("rasterize_256");
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| r.rasterize_with(256, 256, exec).unwrap()));
    }
    g.finish();
}

fn mixed(c: &mut Criterion) {
    let f = MixedField::random(RVEGrid::new(1.0, 16, 16, 8, 1.0).unwrap(), 0);
    let mut g = c.benchmark_group("decompose_mixed_16x16x8");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| decompose_mixed(&f, 1e-8, policy(exec)).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, operator_apply, effective_tensor, rasterize, mixed);
criterion_main!(benches);
