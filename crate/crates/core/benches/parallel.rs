//! Sequential versus parallel execution of the data-parallel loops.
//!
//! Build with `--no-default-features` to see `Parallel` fall back to
//! sequential iteration.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use regimefactor::breaks::{objective_for, simulate_critical_values, BreakBattery, CriticalSimConfig};
use regimefactor::evaluate::{mcs, BootstrapOptions, LossPanel, McsStatistic};
use regimefactor::factor::estimate_factors;
use regimefactor::msfactor::{em_fit, EmOptions};
use regimefactor::panel::{simulate_panel, standardize, DgpSpec, RegimeSpec};
use regimefactor::Execution;

const POLICIES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn panel(n: usize, t: usize) -> DMatrix<f64> {
    let spec = DgpSpec {
        regimes: RegimeSpec::Markov {
            transition: vec![vec![0.95, 0.05], vec![0.05, 0.95]],
        },
        factor_var: vec![1.0, 4.0],
        loading_signs: Some(vec![1.0, -1.0]),
        ..DgpSpec::no_break(n, t)
    };
    let (p, _) = simulate_panel(&spec, 1).unwrap();
    standardize(&p, None).unwrap().values().clone()
}

fn critical_values(c: &mut Criterion) {
    let config = CriticalSimConfig {
        t_sim: 200,
        reps_multi: 200,
        reps_single: 400,
        seed: 1,
    };
    let mut group = c.benchmark_group("critical_values");
    group.sample_size(10);
    for (name, exec) in POLICIES {
        group.bench_function(name, |b| b.iter(|| simulate_critical_values(&config, exec).unwrap()));
    }
    group.finish();
}

fn break_battery(c: &mut Criterion) {
    let f = estimate_factors(&panel(55, 408), 1).unwrap().factors;
    let (obj, _) = objective_for(&f, None).unwrap();
    let mut group = c.benchmark_group("break_battery");
    for (name, exec) in POLICIES {
        group.bench_function(name, |b| b.iter(|| BreakBattery::new(&obj, 0.015, 7, exec).unwrap()));
    }
    group.finish();
}

fn em_starts(c: &mut Criterion) {
    let x = panel(20, 300);
    let opts = EmOptions {
        n_starts: 8,
        ..Default::default()
    };
    let mut group = c.benchmark_group("em_starts");
    group.sample_size(10);
    for (name, exec) in POLICIES {
        group.bench_function(name, |b| b.iter(|| em_fit(&x, 2, 1, &opts, exec).unwrap()));
    }
    group.finish();
}

fn mcs_bootstrap(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let losses = DMatrix::from_fn(200, 5, |_, k| {
        let z: f64 = StandardNormal.sample(&mut rng);
        1.0 + 0.05 * k as f64 + 0.2 * z
    });
    let names = (1..=5).map(|k| format!("M{k}")).collect();
    let panel = LossPanel::new(losses, names, 1).unwrap();
    let opts = BootstrapOptions {
        n_boot: 2000,
        ..Default::default()
    };
    let mut group = c.benchmark_group("mcs_bootstrap");
    for (name, exec) in POLICIES {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| mcs(&panel, 0.25, McsStatistic::Tmax, &opts, exec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, critical_values, break_battery, em_starts, mcs_bootstrap);
criterion_main!(benches);
