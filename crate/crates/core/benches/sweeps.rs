use adjoint_geo::par::Execution;
use adjoint_geo::sensitivity::{random_directions, terminal_sensitivity, Oracles, Setup};
use adjoint_geo::solver::NewtonConfig;
use adjoint_geo::systems::{builtin, TerminalCost};
use adjoint_geo::tableau::builtin_tableau;
use adjoint_geo::verify::{convergence_order, naturality_check};
use adjoint_geo::Vector;
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn direction_sweep(c: &mut Criterion) {
    let rec = builtin("hess2").unwrap();
    let setup = Setup::from_record(&rec, builtin_tableau("radauIIA3").unwrap(), 200, NewtonConfig::default()).unwrap();
    let cost = TerminalCost::half_squared();
    let mut group = c.benchmark_group("sensitivity_oracles");
    for (name, exec) in MODES {
        let oracles = Oracles {
            directions: random_directions(2, 16, 1),
            tangent: true,
            fd_eps: Some(1e-5),
            exec,
        };
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| terminal_sensitivity(&setup, &cost, &oracles).unwrap())
        });
    }
    group.finish();
}

fn cube(c: &mut Criterion) {
    let rec = builtin("nl-dae").unwrap();
    let dae = rec.index1_dae().unwrap();
    let t = builtin_tableau("radauIIA3").unwrap();
    let pf = Vector::from_element(1, 1.0);
    let cfg = NewtonConfig::default();
    let mut group = c.benchmark_group("naturality_cube");
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| naturality_check(&dae, &rec.u_guess, &t, &rec.q0, &pf, 0.01, 100, &cfg, exec).unwrap())
        });
    }
    group.finish();
}

fn ladder(c: &mut Criterion) {
    let rec = builtin("nl-dae").unwrap();
    let t = builtin_tableau("gauss3").unwrap();
    let hs = [0.1, 0.05, 0.025, 0.0125, 0.00625];
    let cfg = NewtonConfig::default();
    let mut group = c.benchmark_group("convergence_ladder");
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| convergence_order(&rec, &t, &hs, 1.0, &cfg, exec).unwrap())
        });
    }
    group.finish();
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = direction_sweep, cube, ladder
}
criterion_main!(benches);
