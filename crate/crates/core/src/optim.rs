//! Training loops for the robust objective.
//!
//! | method | gradient per step | samples per step | step rule |
//! |--------|-------------------|------------------|-----------|
//! | GSSG | one Giles draw `G(θ)` | `M(τ) + 1` | diminishing |
//! | PSSG | `∇R̂_M` on a fresh subset of size `⌈M0 ν^t⌉` | `M(t)` | constant |
//! | FSG | exact `∇R` | `N` | constant |
//! | SGD | `∇R̂_M` on a fresh subset of fixed size | `M` | diminishing |
//!
//! All four share the trace contract of [`RunTrace`]: a record every
//! `eval_every` iterations and one after the last iteration. Wall-clock time
//! only covers gradient estimation and the parameter update.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::divergence::PhiDivergence;
use crate::error::{DrlError, Result};
use crate::estimators::{full_robust_grad, giles_grad, subsampled_grad, GradientEstimate, RobustParams};
use crate::inner::{robust_loss_unguarded, DEFAULT_EPSILON};
use crate::loss::{misclassification, LogisticLoss, Loss};
use crate::rng::RngState;
use crate::sampling::{IndexSampler, LevelDistribution, DEFAULT_R};
use crate::types::{Dataset, ModelParams, RunTrace, TraceRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Gssg,
    Pssg,
    Fsg,
    Sgd,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Gssg, Method::Pssg, Method::Fsg, Method::Sgd];

    pub fn name(self) -> &'static str {
        match self {
            Method::Gssg => "gssg",
            Method::Pssg => "pssg",
            Method::Fsg => "fsg",
            Method::Sgd => "sgd",
        }
    }

    /// Step rule used when the config does not give one.
    pub fn default_step(self) -> StepSchedule {
        match self {
            Method::Gssg | Method::Sgd => StepSchedule::Diminishing { a: 5000.0, b: 5000.0 },
            Method::Pssg | Method::Fsg => StepSchedule::Constant { gamma: 0.1 },
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = DrlError;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| DrlError::invalid(format!("unknown method '{s}' (expected gssg, pssg, fsg or sgd)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum StepSchedule {
    /// `γ_t = a / (b + t)`
    Diminishing { a: f64, b: f64 },
    Constant { gamma: f64 },
}

impl StepSchedule {
    pub fn gamma(&self, t: usize) -> f64 {
        match *self {
            StepSchedule::Diminishing { a, b } => a / (b + t as f64),
            StepSchedule::Constant { gamma } => gamma,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            StepSchedule::Diminishing { a, b } if a >= 0.0 && b > 0.0 && a.is_finite() && b.is_finite() => Ok(()),
            StepSchedule::Constant { gamma } if gamma >= 0.0 && gamma.is_finite() => Ok(()),
            s => Err(DrlError::invalid(format!("invalid step schedule {s:?}"))),
        }
    }
}

fn d_rho() -> f64 {
    0.1
}
fn d_eps() -> f64 {
    DEFAULT_EPSILON
}
fn d_c() -> f64 {
    1.0
}
fn d_delta() -> f64 {
    0.01
}
fn d_r() -> f64 {
    DEFAULT_R
}
fn d_batch() -> usize {
    10
}
fn d_nu() -> f64 {
    1.001
}
fn d_m0() -> usize {
    10
}
fn d_iters() -> usize {
    2000
}
fn d_eval() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub method: Method,
    /// Name used for output files; defaults to the method name.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default = "d_rho")]
    pub rho: f64,
    #[serde(default)]
    pub divergence: PhiDivergence,
    #[serde(default = "d_eps")]
    pub eps: f64,
    #[serde(default = "d_c")]
    pub c: f64,
    #[serde(default = "d_delta")]
    pub delta: f64,
    /// Level ratio of the Giles estimator (GSSG).
    #[serde(default = "d_r")]
    pub r: f64,
    /// Falls back to [`Method::default_step`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<StepSchedule>,
    /// Fixed subset size (SGD).
    #[serde(default = "d_batch")]
    pub batch_m: usize,
    /// Growth factor (PSSG).
    #[serde(default = "d_nu")]
    pub nu: f64,
    /// Initial subset size (PSSG).
    #[serde(default = "d_m0")]
    pub m0: usize,
    #[serde(default = "d_iters")]
    pub max_iters: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "d_eval")]
    pub eval_every: usize,
    /// Record the exact training robust loss instead of the per-step estimate.
    #[serde(default)]
    pub full_robust_eval: bool,
}

impl OptimizerConfig {
    pub fn new(method: Method) -> Self {
        Self {
            method,
            label: None,
            rho: d_rho(),
            divergence: PhiDivergence::CHI_SQUARED,
            eps: d_eps(),
            c: d_c(),
            delta: d_delta(),
            r: d_r(),
            step: None,
            batch_m: d_batch(),
            nu: d_nu(),
            m0: d_m0(),
            max_iters: d_iters(),
            seed: 0,
            eval_every: d_eval(),
            full_robust_eval: false,
        }
    }

    pub fn label(&self) -> &str {
        self.label.as_deref().unwrap_or(self.method.name())
    }

    pub fn step_schedule(&self) -> StepSchedule {
        self.step.unwrap_or_else(|| self.method.default_step())
    }

    pub fn robust_params(&self) -> RobustParams {
        RobustParams {
            rho: self.rho,
            c: self.c,
            delta: self.delta,
            divergence: self.divergence,
            eps: self.eps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(DrlError::Config(m));
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return bad(format!("rho must be positive, got {}", self.rho));
        }
        if !(self.eps > 0.0) {
            return bad(format!("eps must be positive, got {}", self.eps));
        }
        if !(self.c > 0.0) {
            return bad(format!("c must be positive, got {}", self.c));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return bad(format!("delta must lie in (0, 1), got {}", self.delta));
        }
        if self.eval_every == 0 {
            return bad("eval_every must be at least 1".into());
        }
        let step = self.step_schedule();
        step.validate()?;
        let diminishing = matches!(step, StepSchedule::Diminishing { .. });
        match self.method {
            Method::Gssg => {
                if !(self.r > 0.25 && self.r < 0.5) {
                    return bad(format!("GSSG needs r in (1/4, 1/2), got {}", self.r));
                }
                if !diminishing {
                    return bad("GSSG needs a diminishing step schedule".into());
                }
            }
            Method::Sgd => {
                if self.batch_m == 0 {
                    return bad("SGD needs batch_m >= 1".into());
                }
                if !diminishing {
                    return bad("SGD needs a diminishing step schedule".into());
                }
            }
            Method::Pssg => {
                if self.m0 == 0 || !(self.nu > 1.0) {
                    return bad(format!("PSSG needs m0 >= 1 and nu > 1, got m0 = {}, nu = {}", self.m0, self.nu));
                }
                if diminishing {
                    return bad("PSSG needs a constant step".into());
                }
            }
            Method::Fsg => {
                if diminishing {
                    return bad("FSG needs a constant step".into());
                }
            }
        }
        Ok(())
    }
}

/// PSSG subset size `min(N, ⌈M0 ν^t⌉)`.
pub fn pssg_batch_size(m0: usize, nu: f64, t: usize, n: usize) -> usize {
    let m = (m0 as f64 * nu.powf(t as f64)).ceil();
    if m >= n as f64 {
        n
    } else {
        m as usize
    }
}

/// First iteration at which the PSSG subset covers the whole dataset.
pub fn pssg_full_iteration(m0: usize, nu: f64, n: usize) -> usize {
    let mut t = ((n as f64 / m0 as f64).ln() / nu.ln()).floor().max(0.0) as usize;
    // Step back over any rounding overshoot, then forward to the first hit.
    while t > 0 && pssg_batch_size(m0, nu, t - 1, n) >= n {
        t -= 1;
    }
    while pssg_batch_size(m0, nu, t, n) < n {
        t += 1;
    }
    t
}

/// Runs the configured method with the logistic loss.
pub fn run(config: &OptimizerConfig, train: &Dataset, test: &Dataset) -> Result<(ModelParams, RunTrace)> {
    run_with_loss(&LogisticLoss, config, train, test)
}

pub fn run_gssg(config: &OptimizerConfig, train: &Dataset, test: &Dataset) -> Result<(ModelParams, RunTrace)> {
    expect_method(config, Method::Gssg)?;
    run(config, train, test)
}

pub fn run_pssg(config: &OptimizerConfig, train: &Dataset, test: &Dataset) -> Result<(ModelParams, RunTrace)> {
    expect_method(config, Method::Pssg)?;
    run(config, train, test)
}

pub fn run_fsg(config: &OptimizerConfig, train: &Dataset, test: &Dataset) -> Result<(ModelParams, RunTrace)> {
    expect_method(config, Method::Fsg)?;
    run(config, train, test)
}

pub fn run_sgd(config: &OptimizerConfig, train: &Dataset, test: &Dataset) -> Result<(ModelParams, RunTrace)> {
    expect_method(config, Method::Sgd)?;
    run(config, train, test)
}

fn expect_method(config: &OptimizerConfig, m: Method) -> Result<()> {
    if config.method != m {
        return Err(DrlError::Config(format!("expected method {m}, got {}", config.method)));
    }
    Ok(())
}

/// Initial iterate `θ₀ ~ U[−1, 1]^d` drawn from the run seed.
pub fn initial_params(config: &OptimizerConfig, d: usize) -> ModelParams {
    ModelParams::random_uniform(d, &mut RngState::with_stream(config.seed, 0))
}

pub fn run_with_loss<L: Loss>(
    loss: &L,
    config: &OptimizerConfig,
    train: &Dataset,
    test: &Dataset,
) -> Result<(ModelParams, RunTrace)> {
    config.validate()?;
    if train.n_features() != test.n_features() {
        return Err(DrlError::DimensionMismatch {
            expected: train.n_features(),
            got: test.n_features(),
        });
    }
    let theta = initial_params(config, train.n_features());
    run_from(loss, config, train, test, theta)
}

/// Same as [`run_with_loss`] from a given starting point.
pub fn run_from<L: Loss>(
    loss: &L,
    config: &OptimizerConfig,
    train: &Dataset,
    test: &Dataset,
    mut theta: ModelParams,
) -> Result<(ModelParams, RunTrace)> {
    config.validate()?;
    theta.check_dim(train)?;
    let n = train.n_rows();
    let params = config.robust_params();
    let step = config.step_schedule();
    let mut rng = RngState::with_stream(config.seed, 1);
    let mut sampler = IndexSampler::new(n);
    let dist = match config.method {
        Method::Gssg => Some(LevelDistribution::new(n, config.r)?),
        _ => None,
    };
    if config.method == Method::Sgd && config.batch_m > n {
        return Err(DrlError::Config(format!(
            "batch_m = {} exceeds the {n} training rows",
            config.batch_m
        )));
    }

    let mut trace = RunTrace::default();
    let mut samples = 0u64;
    let mut elapsed = 0.0;
    for t in 0..config.max_iters {
        let start = Instant::now();
        let est: GradientEstimate = match config.method {
            Method::Gssg => giles_grad(
                loss,
                &theta,
                train,
                dist.as_ref().expect("built for GSSG"),
                &params,
                &mut sampler,
                &mut rng,
            )?,
            Method::Pssg => {
                let m = pssg_batch_size(config.m0, config.nu, t, n);
                if m == n {
                    full_robust_grad(loss, &theta, train, &params)?
                } else {
                    let idx = sampler.draw(m, &mut rng)?;
                    subsampled_grad(loss, &theta, train, &idx, &params)?
                }
            }
            Method::Fsg => full_robust_grad(loss, &theta, train, &params)?,
            Method::Sgd => {
                let idx = sampler.draw(config.batch_m, &mut rng)?;
                subsampled_grad(loss, &theta, train, &idx, &params)?
            }
        };
        theta.step(step.gamma(t), &est.g);
        elapsed += start.elapsed().as_secs_f64();
        samples += est.samples_used;
        if !theta.is_finite() {
            return Err(DrlError::NonFiniteIterate { iteration: t });
        }

        let done = t + 1;
        if done % config.eval_every == 0 || done == config.max_iters {
            let robust = if config.full_robust_eval {
                robust_loss_unguarded(&theta, train, loss, config.rho, config.divergence, config.eps)?.objective
            } else {
                est.loss_estimate
            };
            trace.push(TraceRecord {
                iteration: done,
                cumulative_samples: samples,
                wall_clock_s: elapsed,
                train_robust_loss_estimate: robust,
                test_misclassification: misclassification(&theta, test)?,
            })?;
        }
    }
    Ok((theta, trace))
}
