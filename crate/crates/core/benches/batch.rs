use std::collections::BTreeMap;
use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use ncphase::algebra::{bracket_table, bracket_table_symplectic, epsilon2, extended_map, DeformationParams, Mat};
use ncphase::cli::{run_sweep, SweepAxis, SweepConfig, SweepKind};
use ncphase::nc3d::{generate_feasible_3d, perturb_f_eta, solve_3d, FrozenMask, SolveOptions};
use ncphase::par::{map_range, Execution};

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn feasible_generation(c: &mut Criterion) {
    let mut g = c.benchmark_group("generate_feasible_3d");
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::new(name, 512), &exec, |b, &exec| {
            b.iter(|| map_range(exec, 512, |s| generate_feasible_3d(black_box(s as u64), 1.0).unwrap()))
        });
    }
    g.finish();
}

fn solve_trials(c: &mut Criterion) {
    let starts: Vec<_> = (0..64).map(|s| perturb_f_eta(&generate_feasible_3d(s, 1.0).unwrap(), s, 1e-3)).collect();
    let opts = SolveOptions { tol: 1e-10, max_iter: 20, trace: false };
    let mut g = c.benchmark_group("solve_3d");
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::new(name, starts.len()), &exec, |b, &exec| {
            b.iter(|| map_range(exec, starts.len(), |i| solve_3d(&starts[i], FrozenMask::theta_eta(), opts).unwrap()))
        });
    }
    g.finish();
}

fn bracket_checks(c: &mut Criterion) {
    let maps: Vec<_> = (0..2000)
        .map(|i| {
            let t = i as f64 * 1e-3;
            let p = DeformationParams::new(epsilon2() * t, epsilon2() * (1.0 - t), 1.0).unwrap();
            let f = Mat::from_row_slice(2, 2, &[t, 0.5, 0.5, -t]);
            extended_map(&p, &f, &f).unwrap()
        })
        .collect();
    let mut g = c.benchmark_group("bracket_tables");
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::new(name, maps.len()), &exec, |b, &exec| {
            b.iter(|| {
                map_range(exec, maps.len(), |i| {
                    bracket_table(&maps[i], 1.0).max_abs_diff(&bracket_table_symplectic(&maps[i], 1.0))
                })
            })
        });
    }
    g.finish();
}

fn sweeps(c: &mut Criterion) {
    let axis =
        |name: &str| SweepAxis { name: name.into(), values: None, start: Some(-1.0), stop: Some(1.5), count: Some(40) };
    let cfg = SweepConfig {
        kind: SweepKind::Solve2d,
        base: BTreeMap::from([("f_eta".into(), 0.7), ("f_theta_x".into(), 1.3)]),
        axes: vec![axis("theta"), axis("f_theta"), axis("eta")],
    };
    let mut g = c.benchmark_group("sweep_solve2d");
    g.sample_size(20);
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::new(name, 64_000), &exec, |b, &exec| {
            b.iter(|| run_sweep(black_box(&cfg), exec).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, feasible_generation, solve_trials, bracket_checks, sweeps);
criterion_main!(benches);
