use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use choquard_core::energy::Problem;
use choquard_core::exec::{map_indexed, Execution};
use choquard_core::grid::{GridSpec, RadialGrid};
use choquard_core::kernels::{KernelKind, KernelMatrix};
use choquard_core::nonlinearity::{Nonlinearity, NonlinearityConfig};
use choquard_core::weights::{WeightConfig, Weights};

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn assembly(c: &mut Criterion) {
    let grid = RadialGrid::new(2, &GridSpec { m: 200, r_max: 20.0, ..GridSpec::default() }).unwrap();
    let mut group = c.benchmark_group("kernel_assembly_m200");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| KernelMatrix::assemble(&grid, KernelKind::GMu(0.5), 16, exec).unwrap())
        });
    }
    group.finish();
}

fn convolution_and_path(c: &mut Criterion) {
    let grid = RadialGrid::new(2, &GridSpec::default()).unwrap();
    let kernel = KernelMatrix::assemble(&grid, KernelKind::Log, 16, Execution::Parallel).unwrap();
    let g: Vec<f64> = grid.nodes().iter().map(|r| (-r * r).exp()).collect();
    let mut group = c.benchmark_group("convolution_m800");
    for (name, exec) in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| b.iter(|| kernel.apply(&g, exec)));
    }
    group.finish();

    let mut group = c.benchmark_group("path_energies_33");
    for (name, exec) in MODES {
        let problem = Problem::new(
            Weights::BuiltIn(WeightConfig::default()),
            Nonlinearity::new(NonlinearityConfig::default(), 2).unwrap(),
            grid.clone(),
            exec,
        )
        .unwrap();
        let j = problem.functional(&kernel).unwrap();
        let path: Vec<Vec<f64>> = (0..33)
            .map(|k| grid.nodes().iter().map(|r| 0.1 * k as f64 * (-r * r).exp()).collect())
            .collect();
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| map_indexed(exec, path.len(), |k| j.value(&path[k]).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, assembly, convolution_and_path);
criterion_main!(benches);
