//! Randomized levels for the multi-level gradient estimator.
//!
//! A level `τ ∈ {1..K}` is drawn from a truncated geometric pmf
//! `q_k ∝ r^(k−1)` and selects a subset of size `M(τ) = min(2^τ, N)`.
//! The subset is split into two halves for the antithetic correction, and
//! one further index serves as the singleton base estimate.

use crate::error::{DrlError, Result};
use crate::rng::RngState;

/// Sampling parameter minimizing expected cost × variance.
pub const DEFAULT_R: f64 = 0.353_553_390_593_273_8; // 2^(-3/2)

#[derive(Debug, Clone, PartialEq)]
pub struct LevelDistribution {
    r: f64,
    n: usize,
    /// `q[k - 1] = P(τ = k)`
    q: Vec<f64>,
    cdf: Vec<f64>,
    /// `level_sizes[k]` for `k = 0..=K`; `level_sizes[0] = 1`.
    level_sizes: Vec<usize>,
}

impl LevelDistribution {
    /// Levels for a dataset of `n ≥ 2` rows with `K = ⌈log₂ n⌉`. The pmf
    /// keeps the geometric ratios `q_{k+1}/q_k = r` and is normalized to sum
    /// to one over `1..=K`.
    pub fn new(n: usize, r: f64) -> Result<Self> {
        if n < 2 {
            return Err(DrlError::invalid(format!("level distribution needs N >= 2, got {n}")));
        }
        if !(r > 0.0 && r < 0.5) {
            return Err(DrlError::invalid(format!("r = {r} outside (0, 1/2)")));
        }
        let k_top = (usize::BITS - (n - 1).leading_zeros()) as usize;
        let weights: Vec<f64> = (0..k_top).map(|k| r.powi(k as i32)).collect();
        let total: f64 = weights.iter().sum();
        let q: Vec<f64> = weights.iter().map(|w| w / total).collect();
        let mut cdf = Vec::with_capacity(k_top);
        let mut acc = 0.0;
        for &qk in &q {
            acc += qk;
            cdf.push(acc);
        }
        let level_sizes = (0..=k_top).map(|k| (1usize << k).min(n)).collect();
        Ok(Self {
            r,
            n,
            q,
            cdf,
            level_sizes,
        })
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Top level `K`.
    pub fn k_top(&self) -> usize {
        self.q.len()
    }

    /// `P(τ = k)` for `k` in `1..=K`.
    pub fn q(&self, k: usize) -> f64 {
        self.q[k - 1]
    }

    pub fn pmf(&self) -> &[f64] {
        &self.q
    }

    /// Subset size `M(k) = min(2^k, N)`, for `k` in `0..=K`.
    pub fn level_size(&self, k: usize) -> usize {
        self.level_sizes[k]
    }

    /// `Σ_k q_k M(k)`
    pub fn expected_level_size(&self) -> f64 {
        (1..=self.k_top())
            .map(|k| self.q(k) * self.level_size(k) as f64)
            .sum()
    }

    /// `Σ_k q_k M(k) ln M(k)`, the expected cost of the largest solve.
    pub fn expected_solve_cost(&self) -> f64 {
        (1..=self.k_top())
            .map(|k| {
                let m = self.level_size(k) as f64;
                self.q(k) * m * m.ln()
            })
            .sum()
    }

    /// Inverse-CDF draw of `τ`.
    pub fn sample_tau(&self, rng: &mut RngState) -> usize {
        let u = rng.uniform();
        self.cdf
            .iter()
            .position(|&c| u < c)
            .map_or(self.k_top(), |i| i + 1)
    }
}

/// Index sets for one draw of the multi-level estimator.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampledLevels {
    pub tau: usize,
    /// `ℳ(τ)`, in draw order.
    pub full: Vec<usize>,
    /// First `M(τ−1)` draws of `full`.
    pub left: Vec<usize>,
    /// Last `M(τ−1)` draws of `full`.
    pub right: Vec<usize>,
    pub singleton: usize,
}

impl SampledLevels {
    /// Builds the halves from an already drawn ordered subset. The halves
    /// are the first and the last `half` entries; they overlap only when
    /// `full.len() < 2 * half` (top level with `N` not a power of two).
    pub fn from_draw(tau: usize, full: Vec<usize>, half: usize, singleton: usize) -> Self {
        let m = full.len();
        let left = full[..half].to_vec();
        let right = full[m - half..].to_vec();
        Self {
            tau,
            full,
            left,
            right,
            singleton,
        }
    }
}

/// Partial Fisher–Yates sampler over `0..n` that restores its permutation
/// after every draw, so each draw costs `O(m)`.
#[derive(Debug, Clone)]
pub struct IndexSampler {
    perm: Vec<usize>,
    swaps: Vec<usize>,
}

impl IndexSampler {
    pub fn new(n: usize) -> Self {
        Self {
            perm: (0..n).collect(),
            swaps: Vec::new(),
        }
    }

    pub fn n(&self) -> usize {
        self.perm.len()
    }

    /// `m` distinct indices, uniformly without replacement, in draw order.
    pub fn draw(&mut self, m: usize, rng: &mut RngState) -> Result<Vec<usize>> {
        let n = self.perm.len();
        if m > n {
            return Err(DrlError::invalid(format!(
                "cannot draw {m} distinct indices from {n}"
            )));
        }
        self.swaps.clear();
        for i in 0..m {
            let j = i + rng.below(n - i);
            self.perm.swap(i, j);
            self.swaps.push(j);
        }
        let out = self.perm[..m].to_vec();
        for (i, &j) in self.swaps.iter().enumerate().rev() {
            self.perm.swap(i, j);
        }
        Ok(out)
    }
}

/// Draws `ℳ(τ)`, its halves and the singleton.
///
/// Below the top level, `M(τ) + 1` indices are drawn without replacement and
/// the last one is the singleton. At the top level `ℳ(τ)` is all of `0..N`
/// in random order and the singleton is an independent uniform index.
pub fn sample_subsets(
    dist: &LevelDistribution,
    tau: usize,
    sampler: &mut IndexSampler,
    rng: &mut RngState,
) -> Result<SampledLevels> {
    if tau == 0 || tau > dist.k_top() {
        return Err(DrlError::invalid(format!(
            "level {tau} outside 1..={}",
            dist.k_top()
        )));
    }
    if sampler.n() != dist.n() {
        return Err(DrlError::DimensionMismatch {
            expected: dist.n(),
            got: sampler.n(),
        });
    }
    let m = dist.level_size(tau);
    let half = dist.level_size(tau - 1);
    if m < dist.n() {
        let mut draw = sampler.draw(m + 1, rng)?;
        let singleton = draw.pop().expect("m + 1 >= 2 draws");
        Ok(SampledLevels::from_draw(tau, draw, half, singleton))
    } else {
        let full = sampler.draw(m, rng)?;
        let singleton = rng.below(dist.n());
        Ok(SampledLevels::from_draw(tau, full, half, singleton))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pmf_for_eight_points() {
        let d = LevelDistribution::new(8, 0.25).unwrap();
        assert_eq!(d.k_top(), 3);
        let expect = [1.0 / 1.3125, 0.25 / 1.3125, 0.0625 / 1.3125];
        for (q, e) in d.pmf().iter().zip(expect) {
            assert!((q - e).abs() < 1e-15);
        }
        assert!((d.pmf()[0] - 0.761_905).abs() < 1e-6);
        assert!((d.expected_level_size() - 8.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn pmf_invariants() {
        for n in [2, 3, 8, 100, 1 << 14] {
            for r in [0.26, DEFAULT_R, 0.49] {
                let d = LevelDistribution::new(n, r).unwrap();
                assert!((d.pmf().iter().sum::<f64>() - 1.0).abs() < 1e-12);
                assert!(d.pmf().iter().all(|&q| q > 0.0));
                for w in d.pmf().windows(2) {
                    assert!((w[0] / w[1] - 1.0 / r).abs() < 1e-9);
                }
                assert_eq!(d.level_size(d.k_top()), n);
            }
        }
    }

    #[test]
    fn non_power_of_two_levels() {
        let d = LevelDistribution::new(6, 0.3).unwrap();
        assert_eq!(d.k_top(), 3);
        assert_eq!((1..=3).map(|k| d.level_size(k)).collect::<Vec<_>>(), vec![2, 4, 6]);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(LevelDistribution::new(1, 0.3).is_err());
        assert!(LevelDistribution::new(8, 0.5).is_err());
        assert!(LevelDistribution::new(8, 0.0).is_err());
    }

    #[test]
    fn single_level() {
        let d = LevelDistribution::new(2, 0.3).unwrap();
        let mut rng = RngState::new(0);
        assert!((0..100).all(|_| d.sample_tau(&mut rng) == 1));
    }

    #[test]
    fn tau_is_deterministic() {
        let d = LevelDistribution::new(1024, DEFAULT_R).unwrap();
        let a: Vec<usize> = {
            let mut rng = RngState::new(77);
            (0..50).map(|_| d.sample_tau(&mut rng)).collect()
        };
        let b: Vec<usize> = {
            let mut rng = RngState::new(77);
            (0..50).map(|_| d.sample_tau(&mut rng)).collect()
        };
        assert_eq!(a, b);
    }

    #[test]
    fn tau_frequencies_match_pmf() {
        let d = LevelDistribution::new(8, 0.25).unwrap();
        let mut rng = RngState::new(2024);
        let draws = 1_000_000;
        let mut counts = [0usize; 4];
        for _ in 0..draws {
            counts[d.sample_tau(&mut rng)] += 1;
        }
        for (k, &count) in counts.iter().enumerate().skip(1) {
            let q = d.q(k);
            let sigma = (draws as f64 * q * (1.0 - q)).sqrt();
            let dev = (count as f64 - draws as f64 * q).abs();
            assert!(dev <= 3.0 * sigma, "level {k}: {count} vs {}", draws as f64 * q);
        }
    }

    #[test]
    fn sampler_restores_permutation_and_draws_distinct() {
        let mut s = IndexSampler::new(20);
        let mut rng = RngState::new(3);
        for m in [0, 1, 5, 20] {
            let d = s.draw(m, &mut rng).unwrap();
            let mut sorted = d.clone();
            sorted.sort();
            sorted.dedup();
            assert_eq!(sorted.len(), m);
            assert_eq!(s.perm, (0..20).collect::<Vec<_>>());
        }
        assert!(s.draw(21, &mut rng).is_err());
    }

    #[test]
    fn top_level_is_a_permutation() {
        let d = LevelDistribution::new(8, 0.3).unwrap();
        let mut s = IndexSampler::new(8);
        let mut rng = RngState::new(9);
        let lv = sample_subsets(&d, 3, &mut s, &mut rng).unwrap();
        let mut all = lv.full.clone();
        all.sort();
        assert_eq!(all, (0..8).collect::<Vec<_>>());
        assert_eq!(lv.left.len(), 4);
        assert_eq!(lv.right.len(), 4);
        assert!(lv.singleton < 8);
    }

    #[test]
    fn lowest_level_halves_are_singletons() {
        let d = LevelDistribution::new(8, 0.3).unwrap();
        let mut s = IndexSampler::new(8);
        let mut rng = RngState::new(9);
        let lv = sample_subsets(&d, 1, &mut s, &mut rng).unwrap();
        assert_eq!(lv.full.len(), 2);
        assert_eq!(lv.left, vec![lv.full[0]]);
        assert_eq!(lv.right, vec![lv.full[1]]);
        assert!(!lv.full.contains(&lv.singleton));
    }

    #[test]
    fn overlapping_halves_at_top_of_non_power_of_two() {
        let d = LevelDistribution::new(6, 0.3).unwrap();
        let mut s = IndexSampler::new(6);
        let mut rng = RngState::new(1);
        let lv = sample_subsets(&d, 3, &mut s, &mut rng).unwrap();
        assert_eq!(lv.left.len(), 4);
        assert_eq!(lv.right.len(), 4);
        assert_eq!(&lv.full[2..4], &lv.left[2..4]);
        assert_eq!(&lv.full[2..4], &lv.right[..2]);
    }

    #[test]
    fn inclusion_probability_is_uniform() {
        use statrs::distribution::{ChiSquared, ContinuousCDF};
        let d = LevelDistribution::new(8, 0.3).unwrap();
        let mut s = IndexSampler::new(8);
        let mut rng = RngState::new(31);
        let draws = 100_000;
        let mut counts = [0f64; 8];
        let mut left_counts = [0f64; 8];
        for _ in 0..draws {
            let lv = sample_subsets(&d, 2, &mut s, &mut rng).unwrap();
            for &i in &lv.full {
                counts[i] += 1.0;
            }
            for &i in &lv.left {
                left_counts[i] += 1.0;
            }
        }
        // Each index appears with probability 4/8.
        let p = 0.5;
        let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c - draws as f64 * p).abs() <= 3.0 * sigma);
        }
        // Goodness of fit of the membership totals (4 per draw).
        let expected = draws as f64 * 4.0 / 8.0;
        let stat: f64 = counts.iter().map(|c| (c - expected).powi(2) / expected).sum();
        let pval = 1.0 - ChiSquared::new(7.0).unwrap().cdf(stat);
        assert!(pval > 0.001, "p = {pval}");
        // Each half is a uniform 2-subset: inclusion 2/8.
        let sigma = (draws as f64 * 0.25 * 0.75).sqrt();
        for c in left_counts {
            assert!((c - draws as f64 * 0.25).abs() <= 3.0 * sigma);
        }
    }

    #[test]
    fn expected_cost_matches_empirical() {
        let d = LevelDistribution::new(8, 0.3).unwrap();
        let mut rng = RngState::new(12);
        let draws = 100_000;
        let mut total = 0.0;
        for _ in 0..draws {
            let m = d.level_size(d.sample_tau(&mut rng)) as f64;
            total += m * m.ln();
        }
        let emp = total / draws as f64;
        let exact: f64 = (1..=3)
            .map(|k| d.q(k) * 2f64.powi(k as i32) * k as f64 * 2f64.ln())
            .sum();
        assert!((emp / exact - 1.0).abs() < 0.02, "{emp} vs {exact}");
        assert!((d.expected_solve_cost() - exact).abs() < 1e-12);
    }
}
