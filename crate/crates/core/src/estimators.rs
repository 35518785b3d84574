//! Stochastic estimators of the robust-loss gradient `∇R(θ)`.
//!
//! [`subsampled_grad`] solves the inner problem on one subset and returns the
//! `P*`-weighted gradient; it is biased for `|subset| < N`.
//! [`giles_grad`] combines four such solves at a random level `τ`:
//!
//! ```text
//! Δ_τ = ∇R̂_τ − (∇R̂_{τ,l} + ∇R̂_{τ,r}) / 2
//! G   = ∇R̂_1 + Δ_τ / q_τ
//! ```
//!
//! The level corrections telescope in expectation, so `E[G] = ∇R(θ)`.

use std::time::Instant;

use crate::divergence::{rho_inflated, PhiDivergence};
use crate::error::{DrlError, Result};
use crate::inner::{solve_inner, InnerProblem, InnerSolution, DEFAULT_EPSILON};
use crate::loss::{losses_at, Loss};
use crate::rng::RngState;
use crate::sampling::{sample_subsets, IndexSampler, LevelDistribution, SampledLevels};
use crate::types::{Dataset, ModelParams};

/// Ambiguity-set parameters shared by every estimator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobustParams {
    pub rho: f64,
    /// Scale of the `ρ_M` inflation.
    pub c: f64,
    /// Exponent slack of the `ρ_M` inflation.
    pub delta: f64,
    pub divergence: PhiDivergence,
    pub eps: f64,
}

impl Default for RobustParams {
    fn default() -> Self {
        Self {
            rho: 0.1,
            c: 1.0,
            delta: 0.01,
            divergence: PhiDivergence::CHI_SQUARED,
            eps: DEFAULT_EPSILON,
        }
    }
}

impl RobustParams {
    /// Divergence budget for a size-`m` subset of `n` rows.
    pub fn rho_for(&self, m: usize, n: usize) -> Result<f64> {
        rho_inflated(self.rho, m, n, self.c, self.delta)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientEstimate {
    pub g: Vec<f64>,
    /// Matching estimate of the robust loss value.
    pub loss_estimate: f64,
    /// Distinct rows touched, the cost axis of the experiments.
    pub samples_used: u64,
    pub inner_solves: u32,
    pub wall_clock_s: f64,
}

/// Solves the inner problem for precomputed losses of a size-`z.len()`
/// subset of `n` rows.
pub fn solve_subset(z: &[f64], n: usize, params: &RobustParams) -> Result<InnerSolution> {
    let rho_m = params.rho_for(z.len(), n)?;
    solve_inner(&InnerProblem::new(z, rho_m, params.divergence, params.eps)?)
}

/// `∇R̂_M(θ) = Σ_m p*_m ∇l(θ, ξ_m)` on the rows `idx`, with budget `ρ_M`.
pub fn subsampled_grad<L: Loss>(
    loss: &L,
    theta: &ModelParams,
    data: &Dataset,
    idx: &[usize],
    params: &RobustParams,
) -> Result<GradientEstimate> {
    let start = Instant::now();
    if idx.is_empty() {
        return Err(DrlError::invalid("subsampled gradient needs a nonempty subset"));
    }
    theta.check_dim(data)?;
    let n = data.n_rows();
    if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
        return Err(DrlError::invalid(format!("row index {bad} out of range for {n} rows")));
    }
    let mut seen = idx.to_vec();
    seen.sort_unstable();
    if seen.windows(2).any(|w| w[0] == w[1]) {
        return Err(DrlError::invalid("subset indices must be distinct"));
    }

    let z = losses_at(loss, theta, data, idx);
    let sol = solve_subset(&z, n, params)?;
    let mut g = vec![0.0; theta.dim()];
    for (&i, &w) in idx.iter().zip(&sol.p) {
        if w != 0.0 {
            loss.add_grad(&theta.0, data.row(i), data.label(i), w, &mut g);
        }
    }
    Ok(GradientEstimate {
        g,
        loss_estimate: sol.objective,
        samples_used: idx.len() as u64,
        inner_solves: 1,
        wall_clock_s: start.elapsed().as_secs_f64(),
    })
}

/// One draw of the unbiased multi-level estimator `G(θ)`.
pub fn giles_grad<L: Loss>(
    loss: &L,
    theta: &ModelParams,
    data: &Dataset,
    dist: &LevelDistribution,
    params: &RobustParams,
    sampler: &mut IndexSampler,
    rng: &mut RngState,
) -> Result<GradientEstimate> {
    let start = Instant::now();
    let tau = dist.sample_tau(rng);
    let levels = sample_subsets(dist, tau, sampler, rng)?;
    let mut est = giles_from_levels(loss, theta, data, dist, &levels, params)?;
    est.wall_clock_s = start.elapsed().as_secs_f64();
    Ok(est)
}

/// `G(θ)` for fixed index sets. Exposed so the estimator can be checked
/// against enumeration of every possible draw.
pub fn giles_from_levels<L: Loss>(
    loss: &L,
    theta: &ModelParams,
    data: &Dataset,
    dist: &LevelDistribution,
    levels: &SampledLevels,
    params: &RobustParams,
) -> Result<GradientEstimate> {
    let start = Instant::now();
    let n = data.n_rows();
    if dist.n() != n {
        return Err(DrlError::DimensionMismatch {
            expected: n,
            got: dist.n(),
        });
    }
    theta.check_dim(data)?;
    let m = levels.full.len();
    let half = levels.left.len();
    if levels.right.len() != half || half == 0 || 2 * half < m || half > m {
        return Err(DrlError::invalid("malformed level halves"));
    }
    let q = dist.q(levels.tau);

    let z = losses_at(loss, theta, data, &levels.full);
    let full = solve_subset(&z, n, params)?;
    let left = solve_subset(&z[..half], n, params)?;
    let right = solve_subset(&z[m - half..], n, params)?;
    let z_single = loss.loss(&theta.0, data.row(levels.singleton), data.label(levels.singleton));
    let single = solve_subset(std::slice::from_ref(&z_single), n, params)?;

    // Per-position coefficients of Δ_τ / q_τ over ℳ(τ).
    let mut coef: Vec<f64> = full.p.iter().map(|p| p / q).collect();
    for (c, p) in coef[..half].iter_mut().zip(&left.p) {
        *c -= 0.5 * p / q;
    }
    for (c, p) in coef[m - half..].iter_mut().zip(&right.p) {
        *c -= 0.5 * p / q;
    }

    let mut g = vec![0.0; theta.dim()];
    loss.add_grad(
        &theta.0,
        data.row(levels.singleton),
        data.label(levels.singleton),
        single.p[0],
        &mut g,
    );
    for (&i, &c) in levels.full.iter().zip(&coef) {
        if c != 0.0 {
            loss.add_grad(&theta.0, data.row(i), data.label(i), c, &mut g);
        }
    }
    let loss_estimate =
        single.objective + (full.objective - 0.5 * (left.objective + right.objective)) / q;

    Ok(GradientEstimate {
        g,
        loss_estimate,
        samples_used: m as u64 + 1,
        inner_solves: 4,
        wall_clock_s: start.elapsed().as_secs_f64(),
    })
}

/// Exact `∇R(θ)` on the full dataset (`ρ_N = ρ`).
pub fn full_robust_grad<L: Loss>(
    loss: &L,
    theta: &ModelParams,
    data: &Dataset,
    params: &RobustParams,
) -> Result<GradientEstimate> {
    let idx: Vec<usize> = (0..data.n_rows()).collect();
    subsampled_grad(loss, theta, data, &idx, params)
}
