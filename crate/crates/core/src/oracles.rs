//! Brute-force references for the solver and the estimators.
//!
//! Everything here enumerates: simplex grids, all `M`-subsets, or every
//! possible draw of the multi-level estimator. Only tiny instances are
//! accepted. None of this is used by the training code.

use std::collections::HashMap;

use crate::divergence::{rho_bar, PhiDivergence};
use crate::error::{DrlError, Result};
use crate::estimators::{subsampled_grad, RobustParams};
use crate::inner::robust_loss_full;
use crate::loss::{weighted_grad, Loss};
use crate::sampling::LevelDistribution;
use crate::types::{Dataset, ModelParams};

/// Largest grid the simplex oracle will walk.
const MAX_GRID_POINTS: f64 = 5e7;
/// Largest dataset for [`exact_giles_expectation`].
pub const MAX_GILES_N: usize = 8;
/// Largest number of subsets for [`exhaustive_bias`].
pub const MAX_SUBSETS: u64 = 100_000;

/// Best feasible point of the simplex grid `{k·step : Σk·step = 1}` for
/// `max Σ p z` subject to `(1/M) Σ φ(M p) ≤ ρ`.
pub fn inner_max_grid(z: &[f64], rho: f64, div: PhiDivergence, grid_step: f64) -> Result<(Vec<f64>, f64)> {
    let m = z.len();
    if m == 0 || m > 5 {
        return Err(DrlError::TooLarge(format!("grid oracle needs 1 <= M <= 5, got {m}")));
    }
    if !(grid_step > 0.0 && grid_step <= 1.0) {
        return Err(DrlError::invalid(format!("grid step {grid_step} outside (0, 1]")));
    }
    let k = (1.0 / grid_step).round() as usize;
    if (k as f64 - 1.0 / grid_step).abs() > 1e-9 {
        return Err(DrlError::invalid("grid step must divide 1"));
    }
    if m == 1 {
        return Ok((vec![1.0], z[0]));
    }
    let bar = rho_bar(div, m)?;
    if rho >= bar {
        return Err(DrlError::RhoTooLarge { rho, rho_bar: bar, m });
    }
    let points: f64 = (1..m).map(|i| (k + i) as f64 / i as f64).product();
    if points > MAX_GRID_POINTS {
        return Err(DrlError::TooLarge(format!("{points:.0} grid points")));
    }

    let mut best = (Vec::new(), f64::NEG_INFINITY);
    let mut counts = vec![0usize; m];
    walk(&mut counts, 0, k, &mut |c| {
        let p: Vec<f64> = c.iter().map(|&ci| ci as f64 / k as f64).collect();
        if div.divergence_from_uniform(&p) <= rho + 1e-12 {
            let obj: f64 = p.iter().zip(z).map(|(a, b)| a * b).sum();
            if obj > best.1 {
                best = (p, obj);
            }
        }
    });
    if best.0.is_empty() {
        return Err(DrlError::invalid("no feasible grid point"));
    }
    Ok(best)
}

/// Visits every composition of `left` into `counts[pos..]`.
fn walk(counts: &mut [usize], pos: usize, left: usize, visit: &mut impl FnMut(&[usize])) {
    if pos == counts.len() - 1 {
        counts[pos] = left;
        visit(counts);
        return;
    }
    for c in 0..=left {
        counts[pos] = c;
        walk(counts, pos + 1, left - c, visit);
    }
}

/// Exact `∇R(θ)` via the guarded full-data solve.
pub fn robust_gradient<L: Loss>(loss: &L, theta: &ModelParams, data: &Dataset, params: &RobustParams) -> Result<Vec<f64>> {
    let sol = robust_loss_full(theta, data, loss, params.rho, params.divergence, params.eps)?;
    let idx: Vec<usize> = (0..data.n_rows()).collect();
    weighted_grad(loss, theta, data, &idx, &sol.p)
}

/// Caches `∇R̂` per subset, keyed by a bit mask over at most 64 rows.
struct SubsetGrads<'a, L: Loss> {
    loss: &'a L,
    theta: &'a ModelParams,
    data: &'a Dataset,
    params: &'a RobustParams,
    cache: HashMap<u64, Vec<f64>>,
}

impl<'a, L: Loss> SubsetGrads<'a, L> {
    fn new(loss: &'a L, theta: &'a ModelParams, data: &'a Dataset, params: &'a RobustParams) -> Self {
        Self {
            loss,
            theta,
            data,
            params,
            cache: HashMap::new(),
        }
    }

    fn get(&mut self, idx: &[usize]) -> Result<&Vec<f64>> {
        let mask = idx.iter().fold(0u64, |m, &i| m | (1 << i));
        if !self.cache.contains_key(&mask) {
            let mut sorted = idx.to_vec();
            sorted.sort_unstable();
            let g = subsampled_grad(self.loss, self.theta, self.data, &sorted, self.params)?.g;
            self.cache.insert(mask, g);
        }
        Ok(&self.cache[&mask])
    }
}

/// Visits every ordered sequence of `len` distinct values from `0..n`.
fn for_each_sequence(n: usize, len: usize, visit: &mut impl FnMut(&[usize]) -> Result<()>) -> Result<()> {
    fn rec(
        n: usize,
        len: usize,
        seq: &mut Vec<usize>,
        used: &mut [bool],
        visit: &mut impl FnMut(&[usize]) -> Result<()>,
    ) -> Result<()> {
        if seq.len() == len {
            return visit(seq);
        }
        for i in 0..n {
            if !used[i] {
                used[i] = true;
                seq.push(i);
                rec(n, len, seq, used, visit)?;
                seq.pop();
                used[i] = false;
            }
        }
        Ok(())
    }
    rec(n, len, &mut Vec::with_capacity(len), &mut vec![false; n], visit)
}

fn falling_factorial(n: usize, k: usize) -> f64 {
    (0..k).map(|i| (n - i) as f64).product()
}

/// `E[G(θ)]` computed by enumerating every level and every possible draw
/// with its exact probability. `G` is assembled from its definition,
/// `∇R̂₁ + (∇R̂_τ − (∇R̂_{τ,l} + ∇R̂_{τ,r})/2) / q_τ`, with each `∇R̂`
/// obtained from an independent subset solve.
pub fn exact_giles_expectation<L: Loss>(
    loss: &L,
    theta: &ModelParams,
    data: &Dataset,
    dist: &LevelDistribution,
    params: &RobustParams,
) -> Result<Vec<f64>> {
    let n = data.n_rows();
    if n > MAX_GILES_N {
        return Err(DrlError::TooLarge(format!("exact Giles expectation needs N <= {MAX_GILES_N}, got {n}")));
    }
    if dist.n() != n {
        return Err(DrlError::DimensionMismatch { expected: n, got: dist.n() });
    }
    let d = theta.dim();
    let mut grads = SubsetGrads::new(loss, theta, data, params);
    let mut mean = vec![0.0; d];

    for tau in 1..=dist.k_top() {
        let q = dist.q(tau);
        let m = dist.level_size(tau);
        let h = dist.level_size(tau - 1);
        let mut add = |full: &[usize], single: usize, prob: f64| -> Result<()> {
            let g_full = grads.get(full)?.clone();
            let g_left = grads.get(&full[..h])?.clone();
            let g_right = grads.get(&full[m - h..])?.clone();
            let g_one = grads.get(&[single])?;
            for j in 0..d {
                let delta = g_full[j] - 0.5 * (g_left[j] + g_right[j]);
                let g = g_one[j] + delta / q;
                mean[j] += q * prob * g;
            }
            Ok(())
        };
        if m < n {
            let prob = 1.0 / falling_factorial(n, m + 1);
            for_each_sequence(n, m + 1, &mut |s| add(&s[..m], s[m], prob))?;
        } else {
            let prob = 1.0 / (falling_factorial(n, n) * n as f64);
            for_each_sequence(n, n, &mut |s| {
                for single in 0..n {
                    add(s, single, prob)?;
                }
                Ok(())
            })?;
        }
    }
    Ok(mean)
}

fn binomial(n: usize, k: usize) -> u64 {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc.min(u64::MAX as u128) as u64
}

/// Visits every `m`-subset of `0..n` in lexicographic order.
fn for_each_subset(n: usize, m: usize, visit: &mut impl FnMut(&[usize]) -> Result<()>) -> Result<()> {
    let mut idx: Vec<usize> = (0..m).collect();
    loop {
        visit(&idx)?;
        let Some(i) = (0..m).rev().find(|&i| idx[i] != i + n - m) else {
            return Ok(());
        };
        idx[i] += 1;
        for j in i + 1..m {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// `E_M[∇R̂_M(θ)]` over all `m`-subsets.
pub fn mean_subset_grad<L: Loss>(
    loss: &L,
    theta: &ModelParams,
    data: &Dataset,
    m: usize,
    params: &RobustParams,
) -> Result<Vec<f64>> {
    let n = data.n_rows();
    if m == 0 || m > n {
        return Err(DrlError::invalid(format!("subset size {m} outside 1..={n}")));
    }
    let count = binomial(n, m);
    if count > MAX_SUBSETS {
        return Err(DrlError::TooLarge(format!("C({n}, {m}) = {count} subsets")));
    }
    let mut mean = vec![0.0; theta.dim()];
    for_each_subset(n, m, &mut |s| {
        let g = subsampled_grad(loss, theta, data, s, params)?.g;
        for (a, b) in mean.iter_mut().zip(&g) {
            *a += b / count as f64;
        }
        Ok(())
    })?;
    Ok(mean)
}

/// `‖E_M[∇R̂_M(θ)] − ∇R(θ)‖²` by enumeration of all `m`-subsets.
pub fn exhaustive_bias<L: Loss>(
    loss: &L,
    theta: &ModelParams,
    data: &Dataset,
    m: usize,
    params: &RobustParams,
) -> Result<f64> {
    let mean = mean_subset_grad(loss, theta, data, m, params)?;
    let exact = robust_gradient(loss, theta, data, params)?;
    Ok(mean.iter().zip(&exact).map(|(a, b)| (a - b).powi(2)).sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loss::LogisticLoss;
    use crate::rng::RngState;

    fn random_data(n: usize, seed: u64) -> Dataset {
        let mut rng = RngState::new(seed);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.uniform_in(-2.0, 2.0), rng.uniform_in(-2.0, 2.0)]).collect();
        let labels = (0..n).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        Dataset::from_dense("r", &rows, labels).unwrap()
    }

    #[test]
    fn grid_matches_closed_form() {
        let (p, obj) = inner_max_grid(&[0.0, 1.0], 0.04, PhiDivergence::CHI_SQUARED, 1e-3).unwrap();
        assert!((obj - 0.6).abs() <= 1e-3, "{obj}");
        assert!((p[1] - 0.6).abs() <= 2e-3);
    }

    #[test]
    fn grid_equal_losses() {
        let (_, obj) = inner_max_grid(&[0.7; 3], 0.1, PhiDivergence::KL, 0.01).unwrap();
        assert!((obj - 0.7).abs() < 1e-12);
    }

    #[test]
    fn grid_rejections() {
        assert!(matches!(
            inner_max_grid(&[0.0; 6], 0.01, PhiDivergence::KL, 0.1),
            Err(DrlError::TooLarge(_))
        ));
        assert!(matches!(
            inner_max_grid(&[0.0, 1.0], 1.0, PhiDivergence::CHI_SQUARED, 0.01),
            Err(DrlError::RhoTooLarge { .. })
        ));
    }

    #[test]
    fn sequences_and_subsets_are_counted() {
        let mut c = 0;
        for_each_sequence(5, 3, &mut |_| {
            c += 1;
            Ok(())
        })
        .unwrap();
        assert_eq!(c, 60);
        let mut c = 0;
        for_each_subset(8, 4, &mut |_| {
            c += 1;
            Ok(())
        })
        .unwrap();
        assert_eq!(c as u64, binomial(8, 4));
        assert_eq!(binomial(8, 4), 70);
    }

    #[test]
    fn giles_expectation_two_points() {
        let data = random_data(2, 1);
        let theta = ModelParams(vec![0.3, -0.8]);
        let params = RobustParams { rho: 0.2, ..Default::default() };
        let dist = LevelDistribution::new(2, 0.3).unwrap();
        let e = exact_giles_expectation(&LogisticLoss, &theta, &data, &dist, &params).unwrap();
        let g = robust_gradient(&LogisticLoss, &theta, &data, &params).unwrap();
        for (a, b) in e.iter().zip(&g) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_rows_collapse() {
        let data = Dataset::from_dense("same", &vec![vec![0.5, -1.0]; 4], vec![1.0; 4]).unwrap();
        let theta = ModelParams(vec![0.2, 0.1]);
        let params = RobustParams { rho: 0.05, ..Default::default() };
        let dist = LevelDistribution::new(4, 0.3).unwrap();
        let e = exact_giles_expectation(&LogisticLoss, &theta, &data, &dist, &params).unwrap();
        let g = LogisticLoss.grad(&theta.0, data.row(0), 1.0);
        for (a, b) in e.iter().zip(&g) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn bias_vanishes_at_full_size() {
        let data = random_data(8, 3);
        let theta = ModelParams(vec![0.4, 0.9]);
        let params = RobustParams { rho: 0.05, ..Default::default() };
        assert!(exhaustive_bias(&LogisticLoss, &theta, &data, 8, &params).unwrap() < 1e-30);
    }

    #[test]
    fn telescoping_identity() {
        let data = random_data(8, 4);
        let theta = ModelParams(vec![-0.6, 0.5]);
        let params = RobustParams { rho: 0.05, ..Default::default() };
        let level: Vec<Vec<f64>> = [1, 2, 4, 8]
            .iter()
            .map(|&m| mean_subset_grad(&LogisticLoss, &theta, &data, m, &params).unwrap())
            .collect();
        let exact = robust_gradient(&LogisticLoss, &theta, &data, &params).unwrap();
        for j in 0..2 {
            let tele: f64 = level[0][j] + (1..4).map(|k| level[k][j] - level[k - 1][j]).sum::<f64>();
            assert!((tele - exact[j]).abs() < 1e-12);
        }
    }
}
