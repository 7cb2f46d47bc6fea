use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use seg_core::operators::ROOT_TOL;
use seg_core::par::{map_indices, Execution};
use seg_core::quadgame::{generate_game, GameGenConfig};
use seg_core::sampling::{SamplingScheme, SchemeAnalysis};
use seg_core::schedule::StepsizePolicy;
use seg_core::solvers::{run, Method, SolverConfig};
use seg_core::theory::{certify_unified, probe_points, sseg_params, CertConfig, CertMethod};

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn seed_sweep(c: &mut Criterion) {
    let op = generate_game(&GameGenConfig::desk(0)).unwrap().to_operator().unwrap();
    let x_star = op.solve_root(ROOT_TOL).unwrap();
    let x0 = x_star.add_scalar(1.0);
    let scheme = SamplingScheme::uniform(op.n(), 1).unwrap();
    let gamma = SchemeAnalysis::new(&scheme, &op).unwrap().cap();
    let cfg = SolverConfig::new(Method::Sseg(scheme), StepsizePolicy::constant(gamma, 0.25).unwrap(), 2000);

    let mut g = c.benchmark_group("seed_sweep_32x2000");
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                let finals = map_indices(exec, 32, |s| run(&op, &x0, &x_star, &cfg.clone().seed(0, s as u64)).unwrap().last().dist_sq);
                black_box(finals)
            })
        });
    }
    g.finish();
}

fn certificate(c: &mut Criterion) {
    let op = generate_game(&GameGenConfig::desk(1)).unwrap().to_operator().unwrap();
    let x_star = op.solve_root(ROOT_TOL).unwrap();
    let scheme = SamplingScheme::b_nice(op.n(), 4).unwrap();
    let an = SchemeAnalysis::new(&scheme, &op).unwrap();
    let consts = an.constants(&x_star).unwrap();
    let params = sseg_params(&consts, consts.cap, 0.25).unwrap();
    let points = probe_points(&x_star, 16, 0);

    let mut g = c.benchmark_group("certificate_16x1000");
    g.sample_size(10);
    for (name, exec) in MODES {
        let cfg = CertConfig {
            samples: 1000,
            exec,
            ..Default::default()
        };
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| black_box(certify_unified(&op, &x_star, &CertMethod::Sseg(&an), &params, consts.cap, 0.25, &points, &cfg).unwrap()))
        });
    }
    g.finish();
}

criterion_group!(benches, seed_sweep, certificate);
criterion_main!(benches);
