//! Statistical and timing behaviour that needs many repetitions.

use std::sync::Mutex;
use std::time::Instant;

use drl_core::data::{make_synthetic, SyntheticSpec};
use drl_core::estimators::{full_robust_grad, subsampled_grad};
use drl_core::optim::{self, initial_params, Method, OptimizerConfig};
use drl_core::sampling::{sample_subsets, IndexSampler, DEFAULT_R};
use drl_core::{
    solve_inner, InnerProblem, LevelDistribution, LogisticLoss, ModelParams, PhiDivergence, RngState,
    RobustParams,
};

static TIMING: Mutex<()> = Mutex::new(());

fn slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let cov: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let var: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    cov / var
}

#[test]
fn inner_solver_scales_like_m_log_m() {
    let _g = TIMING.lock().unwrap_or_else(|e| e.into_inner());
    for div in [PhiDivergence::CHI_SQUARED, PhiDivergence::KL] {
        let mut log_m = Vec::new();
        let mut log_t = Vec::new();
        for e in 6..=14 {
            let m = 1usize << e;
            let mut rng = RngState::new(e as u64);
            let z: Vec<f64> = (0..m).map(|_| rng.uniform()).collect();
            let rho = 0.5 / m as f64;
            let reps = (1 << 18) / m;
            let best = (0..5)
                .map(|_| {
                    let start = Instant::now();
                    for _ in 0..reps {
                        std::hint::black_box(solve_inner(&InnerProblem::new(&z, rho, div, 1e-7).unwrap()).unwrap());
                    }
                    start.elapsed().as_secs_f64() / reps as f64
                })
                .fold(f64::INFINITY, f64::min);
            log_m.push((m as f64).ln());
            log_t.push(best.ln());
        }
        let k = slope(&log_m, &log_t);
        assert!((0.9..=1.3).contains(&k), "{div}: fitted exponent {k:.3}");
    }
}

#[test]
fn expected_solve_cost_is_bounded_in_n() {
    // M log M is heavy tailed for r > 1/4, so the draw count is sized to keep
    // the Monte Carlo standard error near 0.5% of the mean.
    for (n, draws) in [(1usize << 8, 1_000_000usize), (1 << 14, 25_000_000)] {
        let dist = LevelDistribution::new(n, DEFAULT_R).unwrap();
        let mut rng = RngState::new(31);
        let total: f64 = (0..draws)
            .map(|_| {
                let m = dist.level_size(dist.sample_tau(&mut rng)) as f64;
                m * m.ln()
            })
            .sum();
        let empirical = total / draws as f64;
        let exact = dist.expected_solve_cost();
        assert!((empirical / exact - 1.0).abs() < 0.02, "N={n}: {empirical} vs {exact}");
    }
    let costs: Vec<f64> = (8..=30)
        .map(|e| LevelDistribution::new(1 << e, DEFAULT_R).unwrap().expected_solve_cost())
        .collect();
    assert!(costs.windows(2).all(|w| w[1] > w[0]));
    assert!(costs.last().unwrap() - costs[costs.len() - 2] < 1e-3 * costs.last().unwrap());
}

#[test]
fn left_and_right_halves_have_the_same_mean_gradient() {
    let data = make_synthetic(&SyntheticSpec::new(64, 3, 1.0, 0.0, 4)).unwrap();
    let theta = ModelParams(vec![0.4, -0.2, 0.1]);
    let params = RobustParams {
        rho: 0.05,
        ..Default::default()
    };
    let dist = LevelDistribution::new(64, DEFAULT_R).unwrap();
    let mut rng = RngState::new(12);
    let mut sampler = IndexSampler::new(64);
    let reps = 20_000;
    let mut diff: Vec<Vec<f64>> = (0..3).map(|_| Vec::with_capacity(reps)).collect();
    for _ in 0..reps {
        let tau = dist.sample_tau(&mut rng);
        let lv = sample_subsets(&dist, tau, &mut sampler, &mut rng).unwrap();
        let gl = subsampled_grad(&LogisticLoss, &theta, &data, &lv.left, &params).unwrap().g;
        let gr = subsampled_grad(&LogisticLoss, &theta, &data, &lv.right, &params).unwrap().g;
        for j in 0..3 {
            diff[j].push(gl[j] - gr[j]);
        }
    }
    for (j, d) in diff.iter().enumerate() {
        let mean = d.iter().sum::<f64>() / reps as f64;
        let sd = (d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (reps - 1) as f64).sqrt();
        let se = sd / (reps as f64).sqrt();
        assert!(mean.abs() < 4.0 * se + 1e-12, "coordinate {j}: mean {mean}, se {se}");
    }
}

#[test]
fn gssg_drives_the_robust_gradient_down() {
    let train = make_synthetic(&SyntheticSpec::new(512, 4, 2.0, 0.0, 21)).unwrap();
    let test = make_synthetic(&SyntheticSpec::new(64, 4, 2.0, 0.0, 22)).unwrap();
    let mut cfg = OptimizerConfig::new(Method::Gssg);
    cfg.seed = 3;
    let params = cfg.robust_params();
    let grad_sq = |theta: &ModelParams| {
        full_robust_grad(&LogisticLoss, theta, &train, &params)
            .unwrap()
            .g
            .iter()
            .map(|v| v * v)
            .sum::<f64>()
    };
    let initial = grad_sq(&initial_params(&cfg, 4));
    let mut running_min = initial;
    let mut checkpoints = Vec::new();
    for t in (200..=2000).step_by(200) {
        cfg.max_iters = t;
        cfg.eval_every = t;
        let (theta, _) = optim::run(&cfg, &train, &test).unwrap();
        running_min = running_min.min(grad_sq(&theta));
        checkpoints.push(running_min);
    }
    assert!(checkpoints.windows(2).all(|w| w[1] <= w[0]));
    assert!(
        *checkpoints.last().unwrap() < 0.5 * initial,
        "initial {initial}, running minima {checkpoints:?}"
    );
}
