//! Regularized empirical risk minimization, the non-robust baseline.
//!
//! The model minimizes `(1/N) Σ l(θ, ξ_n) + λ‖θ‖²` by minibatch SGD and the
//! regularization weight is tuned by k-fold cross-validation over a
//! geometric ladder `λ_start, λ_start·f, λ_start·f², ...` that stops once
//! the mean validation error has not improved for `patience` rungs.

use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{DrlError, Result};
use crate::loss::{misclassification, LogisticLoss, Loss};
use crate::optim::StepSchedule;
use crate::rng::RngState;
use crate::sampling::IndexSampler;
use crate::types::{Dataset, ModelParams};

fn d_k() -> usize {
    10
}
fn d_lambda_start() -> f64 {
    1e6
}
fn d_factor() -> f64 {
    0.1
}
fn d_patience() -> usize {
    3
}
fn d_batch() -> usize {
    10
}
fn d_step() -> StepSchedule {
    StepSchedule::Diminishing { a: 5000.0, b: 5000.0 }
}
fn d_iters() -> usize {
    1000
}
fn d_max_lambdas() -> usize {
    13
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CvConfig {
    #[serde(default = "d_k")]
    pub k: usize,
    #[serde(default = "d_lambda_start")]
    pub lambda_start: f64,
    #[serde(default = "d_factor")]
    pub lambda_factor: f64,
    #[serde(default = "d_patience")]
    pub patience: usize,
    #[serde(default = "d_batch")]
    pub sgd_batch: usize,
    #[serde(default = "d_step")]
    pub step: StepSchedule,
    #[serde(default = "d_iters")]
    pub max_iters: usize,
    #[serde(default)]
    pub seed: u64,
    /// Upper bound on the number of ladder rungs.
    #[serde(default = "d_max_lambdas")]
    pub max_lambdas: usize,
    /// Run the k-fold loop k times over reshuffled partitions.
    #[serde(default)]
    pub repeat_partitions: bool,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self {
            k: d_k(),
            lambda_start: d_lambda_start(),
            lambda_factor: d_factor(),
            patience: d_patience(),
            sgd_batch: d_batch(),
            step: d_step(),
            max_iters: d_iters(),
            seed: 0,
            max_lambdas: d_max_lambdas(),
            repeat_partitions: false,
        }
    }
}

impl CvConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(DrlError::Config(m));
        if self.k < 2 {
            return bad(format!("k must be at least 2, got {}", self.k));
        }
        if !(self.lambda_start > 0.0 && self.lambda_start.is_finite()) {
            return bad(format!("lambda_start must be positive, got {}", self.lambda_start));
        }
        if !(self.lambda_factor > 0.0 && self.lambda_factor < 1.0) {
            return bad(format!("lambda_factor must lie in (0, 1), got {}", self.lambda_factor));
        }
        if self.patience == 0 || self.sgd_batch == 0 || self.max_lambdas == 0 {
            return bad("patience, sgd_batch and max_lambdas must be at least 1".into());
        }
        self.step.validate()
    }

    /// The `i`-th rung of the λ ladder.
    pub fn lambda(&self, i: usize) -> f64 {
        self.lambda_start * self.lambda_factor.powi(i as i32)
    }
}

/// `(1/N) Σ l(θ, ξ_n) + λ‖θ‖²`
pub fn regularized_objective<L: Loss>(loss: &L, theta: &ModelParams, data: &Dataset, lambda: f64) -> f64 {
    let n = data.n_rows() as f64;
    let emp: f64 = data.rows().map(|(x, y)| loss.loss(&theta.0, x, y)).sum::<f64>() / n;
    emp + lambda * theta.0.iter().map(|t| t * t).sum::<f64>()
}

/// Gradient of [`regularized_objective`].
pub fn regularized_grad<L: Loss>(loss: &L, theta: &ModelParams, data: &Dataset, lambda: f64) -> Vec<f64> {
    let n = data.n_rows() as f64;
    let mut g: Vec<f64> = theta.0.iter().map(|t| 2.0 * lambda * t).collect();
    for (x, y) in data.rows() {
        loss.add_grad(&theta.0, x, y, 1.0 / n, &mut g);
    }
    g
}

/// Minibatch SGD on the regularized objective. The data term takes an
/// explicit step and the `λ‖θ‖²` term a proximal one,
/// `θ ← (θ − γ g) / (1 + 2γλ)`, which stays stable for very large `λ`.
#[allow(clippy::too_many_arguments)]
pub fn erm_sgd<L: Loss>(
    loss: &L,
    theta0: ModelParams,
    data: &Dataset,
    lambda: f64,
    batch: usize,
    step: StepSchedule,
    iters: usize,
    rng: &mut RngState,
) -> Result<ModelParams> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(DrlError::invalid(format!("lambda must be nonnegative, got {lambda}")));
    }
    if batch == 0 {
        return Err(DrlError::invalid("batch must be at least 1"));
    }
    theta0.check_dim(data)?;
    let n = data.n_rows();
    let batch = batch.min(n);
    let mut sampler = IndexSampler::new(n);
    let mut theta = theta0;
    let mut g = vec![0.0; theta.dim()];
    for t in 0..iters {
        g.iter_mut().for_each(|v| *v = 0.0);
        let scale = 1.0 / batch as f64;
        if batch == n {
            for (x, y) in data.rows() {
                loss.add_grad(&theta.0, x, y, scale, &mut g);
            }
        } else {
            for i in sampler.draw(batch, rng)? {
                loss.add_grad(&theta.0, data.row(i), data.label(i), scale, &mut g);
            }
        }
        let gamma = step.gamma(t);
        let shrink = 1.0 / (1.0 + 2.0 * gamma * lambda);
        for (th, gi) in theta.0.iter_mut().zip(&g) {
            *th = (*th - gamma * gi) * shrink;
        }
        if !theta.is_finite() {
            return Err(DrlError::NonFiniteIterate { iteration: t });
        }
    }
    Ok(theta)
}

/// Index of the first strict minimum.
pub fn best_index(means: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &m) in means.iter().enumerate() {
        if best.is_none_or(|b| m < means[b]) {
            best = Some(i);
        }
    }
    best
}

/// True once the last `patience` values all failed to improve on the best.
pub fn ladder_should_stop(means: &[f64], patience: usize) -> bool {
    match best_index(means) {
        Some(b) => means.len() - 1 - b >= patience,
        None => false,
    }
}

/// Assigns each row to a fold so that fold sizes differ by at most one.
pub fn fold_assignment(n: usize, k: usize, rng: &mut RngState) -> Result<Vec<usize>> {
    let perm = IndexSampler::new(n).draw(n, rng)?;
    let mut fold = vec![0; n];
    for (pos, &row) in perm.iter().enumerate() {
        fold[row] = pos % k;
    }
    Ok(fold)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvRecord {
    pub lambda: f64,
    /// Fold index; with repeated partitions it runs over `0..k²`.
    pub fold: usize,
    pub val_misclassification: f64,
    pub train_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct CvResult {
    pub best_lambda: f64,
    /// Model retrained on all rows at `best_lambda`.
    pub model: ModelParams,
    pub report: Vec<CvRecord>,
    /// `(λ, mean validation misclassification)` per rung tried.
    pub ladder: Vec<(f64, f64)>,
    pub final_train_seconds: f64,
    /// Sum of fold training times plus the final retrain.
    pub total_train_seconds: f64,
}

impl CvResult {
    pub fn train_calls(&self) -> usize {
        self.report.len()
    }

    pub fn write_report_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "lambda,fold,val_misclassification,train_seconds")?;
        for r in &self.report {
            writeln!(w, "{},{},{},{}", r.lambda, r.fold, r.val_misclassification, r.train_seconds)?;
        }
        Ok(())
    }
}

pub fn kfold_cv(data: &Dataset, config: &CvConfig) -> Result<CvResult> {
    kfold_cv_with_loss(&LogisticLoss, data, config)
}

pub fn kfold_cv_with_loss<L: Loss>(loss: &L, data: &Dataset, config: &CvConfig) -> Result<CvResult> {
    config.validate()?;
    let n = data.n_rows();
    if n < config.k {
        return Err(DrlError::invalid(format!("{n} rows cannot be split into {} folds", config.k)));
    }
    let d = data.n_features();
    let repeats = if config.repeat_partitions { config.k } else { 1 };

    // Train/validation splits, fixed across the whole ladder.
    let mut splits = Vec::with_capacity(repeats * config.k);
    for rep in 0..repeats {
        let mut rng = RngState::with_stream(config.seed, 1000 + rep as u64);
        let fold = fold_assignment(n, config.k, &mut rng)?;
        for f in 0..config.k {
            let (val, train): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| fold[i] == f);
            splits.push((data.subset(&train), data.subset(&val)));
        }
    }

    let mut report = Vec::new();
    let mut ladder: Vec<(f64, f64)> = Vec::new();
    let mut means = Vec::new();
    for rung in 0..config.max_lambdas {
        let lambda = config.lambda(rung);
        let mut errs = Vec::with_capacity(splits.len());
        for (s, (train, val)) in splits.iter().enumerate() {
            let mut rng = RngState::with_stream(config.seed, 2 + s as u64);
            let theta0 = ModelParams::random_uniform(d, &mut rng);
            let start = Instant::now();
            let model = erm_sgd(loss, theta0, train, lambda, config.sgd_batch, config.step, config.max_iters, &mut rng)?;
            let secs = start.elapsed().as_secs_f64();
            let err = misclassification(&model, val)?;
            errs.push(err);
            report.push(CvRecord {
                lambda,
                fold: s,
                val_misclassification: err,
                train_seconds: secs,
            });
        }
        let mean = errs.iter().sum::<f64>() / errs.len() as f64;
        ladder.push((lambda, mean));
        means.push(mean);
        if ladder_should_stop(&means, config.patience) {
            break;
        }
    }

    let best = best_index(&means).expect("at least one rung");
    let best_lambda = ladder[best].0;
    let mut rng = RngState::with_stream(config.seed, 1);
    let theta0 = ModelParams::random_uniform(d, &mut rng);
    let start = Instant::now();
    let model = erm_sgd(loss, theta0, data, best_lambda, config.sgd_batch, config.step, config.max_iters, &mut rng)?;
    let final_train_seconds = start.elapsed().as_secs_f64();
    let total_train_seconds = report.iter().map(|r| r.train_seconds).sum::<f64>() + final_train_seconds;
    Ok(CvResult {
        best_lambda,
        model,
        report,
        ladder,
        final_train_seconds,
        total_train_seconds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_synthetic, normalize_rows, SyntheticSpec};
    use crate::loss::empirical_loss;

    #[test]
    fn patience_rule() {
        let seq = [0.30, 0.20, 0.21, 0.22, 0.23];
        let stops: Vec<bool> = (1..=5).map(|k| ladder_should_stop(&seq[..k], 3)).collect();
        assert_eq!(stops, [false, false, false, false, true]);
        assert_eq!(best_index(&seq), Some(1));
        // Ties do not count as improvement.
        assert!(ladder_should_stop(&[0.2, 0.2, 0.2, 0.2], 3));
    }

    #[test]
    fn ladder_rungs() {
        let c = CvConfig::default();
        let l: Vec<f64> = (0..4).map(|i| c.lambda(i)).collect();
        for (a, b) in l.iter().zip([1e6, 1e5, 1e4, 1e3]) {
            assert!((a / b - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn folds_are_balanced_cover() {
        let mut rng = RngState::new(5);
        let f = fold_assignment(103, 10, &mut rng).unwrap();
        let mut sizes = [0usize; 10];
        for &k in &f {
            sizes[k] += 1;
        }
        assert_eq!(sizes.iter().sum::<usize>(), 103);
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    }

    #[test]
    fn huge_lambda_shrinks_theta() {
        let data = normalize_rows(&make_synthetic(&SyntheticSpec::new(200, 5, 2.0, 0.0, 3)).unwrap()).unwrap();
        let mut rng = RngState::new(1);
        let theta0 = ModelParams::random_uniform(5, &mut rng);
        let theta = erm_sgd(&LogisticLoss, theta0, &data, 1e6, 10, d_step(), 500, &mut rng).unwrap();
        assert!(theta.norm() <= 1e-2, "{}", theta.norm());
    }

    #[test]
    fn full_batch_without_penalty_is_gradient_descent() {
        let data = make_synthetic(&SyntheticSpec::new(40, 3, 1.0, 0.0, 4)).unwrap();
        let theta0 = ModelParams(vec![0.3, -0.2, 0.1]);
        let step = StepSchedule::Constant { gamma: 0.5 };
        let mut rng = RngState::new(0);
        let theta = erm_sgd(&LogisticLoss, theta0.clone(), &data, 0.0, 40, step, 3, &mut rng).unwrap();
        let mut expect = theta0;
        for _ in 0..3 {
            let g = regularized_grad(&LogisticLoss, &expect, &data, 0.0);
            expect.step(0.5, &g);
        }
        for (a, b) in theta.0.iter().zip(&expect.0) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(empirical_loss(&LogisticLoss, &theta, &data) < empirical_loss(&LogisticLoss, &ModelParams(vec![0.3, -0.2, 0.1]), &data));
    }

    #[test]
    fn cv_accounting() {
        let data = make_synthetic(&SyntheticSpec::new(40, 2, 2.0, 0.0, 8)).unwrap();
        let cfg = CvConfig {
            k: 2,
            max_lambdas: 1,
            max_iters: 20,
            ..Default::default()
        };
        let res = kfold_cv(&data, &cfg).unwrap();
        assert_eq!(res.train_calls(), 2);
        assert_eq!(res.best_lambda, 1e6);
        let sum: f64 = res.report.iter().map(|r| r.train_seconds).sum();
        assert!((res.total_train_seconds - sum - res.final_train_seconds).abs() < 1e-12);
        let mut buf = Vec::new();
        res.write_report_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 3);

        let rep = kfold_cv(&data, &CvConfig { repeat_partitions: true, ..cfg.clone() }).unwrap();
        assert_eq!(rep.train_calls(), 4);
        assert!(kfold_cv(&data.subset(&[0]), &cfg).is_err());
    }

    #[test]
    fn cv_stops_by_patience() {
        let data = make_synthetic(&SyntheticSpec::new(60, 2, 3.0, 0.0, 8)).unwrap();
        let cfg = CvConfig {
            k: 3,
            max_iters: 50,
            ..Default::default()
        };
        let res = kfold_cv(&data, &cfg).unwrap();
        let means: Vec<f64> = res.ladder.iter().map(|l| l.1).collect();
        assert!(res.ladder.len() == cfg.max_lambdas || ladder_should_stop(&means, 3));
        assert_eq!(res.train_calls(), 3 * res.ladder.len());
    }
}
