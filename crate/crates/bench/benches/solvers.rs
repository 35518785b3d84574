use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use drl_bench::{problem, random_losses};
use drl_core::estimators::{full_robust_grad, giles_grad};
use drl_core::sampling::{IndexSampler, DEFAULT_R};
use drl_core::{solve_inner, InnerProblem, LevelDistribution, LogisticLoss, PhiDivergence, RngState, RobustParams};
use std::hint::black_box;

fn inner(c: &mut Criterion) {
    let mut group = c.benchmark_group("solve_inner");
    for div in [PhiDivergence::CHI_SQUARED, PhiDivergence::KL] {
        for m in [64usize, 1024, 16384] {
            let z = random_losses(m, 3);
            let rho = 0.5 / m as f64;
            group.bench_with_input(BenchmarkId::new(div.to_string(), m), &z, |b, z| {
                b.iter(|| solve_inner(&InnerProblem::new(black_box(z), rho, div, 1e-7).unwrap()).unwrap())
            });
        }
    }
    group.finish();
}

fn estimators(c: &mut Criterion) {
    let (data, theta) = problem(4096, 10);
    let params = RobustParams::default();
    let dist = LevelDistribution::new(data.n_rows(), DEFAULT_R).unwrap();
    let mut sampler = IndexSampler::new(data.n_rows());
    let mut rng = RngState::new(5);
    c.bench_function("giles_grad/n4096", |b| {
        b.iter(|| giles_grad(&LogisticLoss, &theta, &data, &dist, &params, &mut sampler, &mut rng).unwrap())
    });
    c.bench_function("full_robust_grad/n4096", |b| {
        b.iter(|| full_robust_grad(&LogisticLoss, &theta, &data, &params).unwrap())
    });
}

fn sampling(c: &mut Criterion) {
    let n = 1 << 16;
    let dist = LevelDistribution::new(n, DEFAULT_R).unwrap();
    let mut rng = RngState::new(8);
    c.bench_function("sample_tau", |b| b.iter(|| dist.sample_tau(&mut rng)));
    let mut sampler = IndexSampler::new(n);
    c.bench_function("index_sampler/draw_1024_of_65536", |b| {
        b.iter(|| sampler.draw(1024, &mut rng).unwrap())
    });
}

criterion_group!(benches, inner, estimators, sampling);
criterion_main!(benches);
