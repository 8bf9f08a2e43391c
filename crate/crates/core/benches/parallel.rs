use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use pvariv::montecarlo::{prepare, rep_rng, simulate_panel};
use pvariv::{
    coverage_experiment, fit_pvar, Exec, GridSpec, InferenceOptions, IrfMoments, McConfig, Target,
};

const STRATEGIES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn coverage(c: &mut Criterion) {
    let mut group = c.benchmark_group("coverage_experiment");
    group.sample_size(10);
    for (name, exec) in STRATEGIES {
        let cfg = McConfig { reps: 200, exec, ..McConfig::baseline_calibration() };
        group.bench_with_input(BenchmarkId::from_parameter(name), &cfg, |b, cfg| {
            b.iter(|| coverage_experiment(cfg).unwrap())
        });
    }
    group.finish();
}

fn grid_inversion(c: &mut Criterion) {
    let cfg = McConfig::baseline_calibration();
    let (dgp, gamma) = prepare(&cfg).unwrap();
    let (data, z) = simulate_panel(&dgp, &cfg, gamma, &mut rep_rng(cfg.seed, 0)).unwrap();
    let model = fit_pvar(&data, 1).unwrap();
    let z = z.pooled_on(&model.unit_ids, &model.time_ids).unwrap();
    let moments = IrfMoments::new(&model, &z, 8, InferenceOptions::default()).unwrap();
    let problem = moments.problem(4, 1, Target::Cumulative);
    let base = problem.default_grid();
    let grid = GridSpec { n_points: 200_001, ..base };

    let mut group = c.benchmark_group("ar_grid_inversion");
    for (name, exec) in STRATEGIES {
        group.bench_function(name, |b| b.iter(|| problem.ar_set(0.05, Some(grid), exec).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, coverage, grid_inversion);
criterion_main!(benches);
