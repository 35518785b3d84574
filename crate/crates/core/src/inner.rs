//! Inner maximization over the φ-divergence ball.
//!
//! Given losses `z_1..z_M` and a budget `ρ_M`, [`solve_inner`] finds
//!
//! ```text
//! max Σ p_m z_m   s.t.  (1/M) Σ φ(M p_m) ≤ ρ_M,  Σ p_m = 1,  p ≥ 0.
//! ```
//!
//! The solver first tries the unconstrained vertex (`α = 0`): uniform mass on
//! the arg-max set. If that violates the budget the divergence constraint is
//! active, and the optimal weights have the form
//! `p_m = (1/M) (φ')⁻¹((z_m − λ)/α)`, clamped at zero below the `φ'(0)`
//! threshold. The multiplier `λ` that normalizes the weights is found
//! exactly for every `α` (sorted thresholds for χ², log-sum-exp for KL) and
//! `α` is bisected until the divergence equals `ρ_M` to within `ε`.
//!
//! The solver works on the losses sorted in decreasing order, so the result
//! depends only on the multiset of losses and not on the order in which the
//! subset was drawn.

use crate::divergence::{rho_bar, DivergenceKind, PhiDivergence, ZeroSlope};
use crate::error::{DrlError, Result};
use crate::loss::{losses_at, Loss};
use crate::types::{Dataset, ModelParams};

/// Losses within this absolute distance of the maximum belong to the
/// arg-max set of the `α = 0` case.
pub const TIE_TOLERANCE: f64 = 1e-12;

/// Default divergence tolerance.
pub const DEFAULT_EPSILON: f64 = 1e-7;

const ALPHA_LO_START: f64 = 1e-12;
const ALPHA_HI_START: f64 = 1.0;
const MAX_EXPANSIONS: usize = 2048;
const MAX_BISECTIONS: usize = 400;

#[derive(Debug, Clone, Copy)]
pub struct InnerProblem<'a> {
    z: &'a [f64],
    rho_target: f64,
    divergence: PhiDivergence,
    epsilon: f64,
}

impl<'a> InnerProblem<'a> {
    pub fn new(z: &'a [f64], rho_target: f64, divergence: PhiDivergence, epsilon: f64) -> Result<Self> {
        if z.is_empty() {
            return Err(DrlError::invalid("inner problem needs at least one loss value"));
        }
        if let Some(index) = z.iter().position(|v| !v.is_finite()) {
            return Err(DrlError::NonFiniteLoss { index });
        }
        if !(rho_target > 0.0 && rho_target.is_finite()) {
            return Err(DrlError::invalid(format!("rho target must be positive, got {rho_target}")));
        }
        if !(epsilon > 0.0) {
            return Err(DrlError::invalid(format!("epsilon must be positive, got {epsilon}")));
        }
        Ok(Self {
            z,
            rho_target,
            divergence,
            epsilon,
        })
    }

    /// Rejects budgets at or above the feasibility ceiling for `M` points,
    /// where the optimum may drop support points.
    pub fn require_nondegenerate(&self) -> Result<()> {
        let m = self.z.len();
        if m >= 2 {
            let bar = rho_bar(self.divergence, m)?;
            if self.rho_target >= bar {
                return Err(DrlError::RhoTooLarge {
                    rho: self.rho_target,
                    rho_bar: bar,
                    m,
                });
            }
        }
        Ok(())
    }

    pub fn z(&self) -> &[f64] {
        self.z
    }

    pub fn rho_target(&self) -> f64 {
        self.rho_target
    }

    pub fn divergence(&self) -> PhiDivergence {
        self.divergence
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CaseTaken {
    AlphaZero,
    Bisection,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InnerSolution {
    /// Optimal weights, in the order of the input losses.
    pub p: Vec<f64>,
    pub alpha: f64,
    pub lambda: f64,
    /// `Σ p_m z_m`
    pub objective: f64,
    /// `(1/M) Σ φ(M p_m)` at the returned weights.
    pub divergence: f64,
    pub case_taken: CaseTaken,
    pub bisection_iters: usize,
}

pub fn solve_inner(problem: &InnerProblem<'_>) -> Result<InnerSolution> {
    let z = problem.z;
    let m = z.len();
    let div = problem.divergence;
    let rho = problem.rho_target;

    if m == 1 {
        return Ok(InnerSolution {
            p: vec![1.0],
            alpha: 0.0,
            lambda: z[0],
            objective: z[0],
            divergence: 0.0,
            case_taken: CaseTaken::AlphaZero,
            bisection_iters: 0,
        });
    }

    let z_max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let n_top = z.iter().filter(|&&v| v >= z_max - TIE_TOLERANCE).count();
    let mf = m as f64;
    let top_share = n_top as f64 / mf;
    let vertex_divergence = top_share * div.phi(mf / n_top as f64) + (1.0 - top_share) * div.phi_at_zero();
    if vertex_divergence <= rho {
        let w = 1.0 / n_top as f64;
        let p: Vec<f64> = z
            .iter()
            .map(|&v| if v >= z_max - TIE_TOLERANCE { w } else { 0.0 })
            .collect();
        let objective = dot(&p, z);
        return Ok(InnerSolution {
            p,
            alpha: 0.0,
            lambda: z_max,
            objective,
            divergence: vertex_divergence,
            case_taken: CaseTaken::AlphaZero,
            bisection_iters: 0,
        });
    }

    let mut sorted = z.to_vec();
    sorted.sort_unstable_by(|a, b| b.total_cmp(a));
    let profile = DualProfile::new(div, &sorted);
    let (alpha, lambda, divergence, iters) = bisect_alpha(&profile, rho, problem.epsilon)?;

    let p: Vec<f64> = z
        .iter()
        .map(|&v| profile.scaled_weight(v, alpha, lambda) / mf)
        .collect();
    let objective = dot(&p, z);
    Ok(InnerSolution {
        p,
        alpha,
        lambda,
        objective,
        divergence,
        case_taken: CaseTaken::Bisection,
        bisection_iters: iters,
    })
}

/// Worst-case reweighting of the whole dataset at `theta` with budget `rho`.
/// Rejects `rho ≥ ρ̄(N)`, where optimal weights may vanish and `P*` need not
/// be unique.
pub fn robust_loss_full<L: Loss>(
    theta: &ModelParams,
    data: &Dataset,
    loss: &L,
    rho: f64,
    div: PhiDivergence,
    eps: f64,
) -> Result<InnerSolution> {
    full_solve(theta, data, loss, rho, div, eps, true)
}

/// Same as [`robust_loss_full`] without the `ρ̄(N)` guard. Training runs use
/// this because practical budgets such as `ρ = 0.1` exceed `ρ̄(N) ≈ 1/N` for
/// all but tiny datasets; the solver itself is well defined for any `ρ > 0`.
pub fn robust_loss_unguarded<L: Loss>(
    theta: &ModelParams,
    data: &Dataset,
    loss: &L,
    rho: f64,
    div: PhiDivergence,
    eps: f64,
) -> Result<InnerSolution> {
    full_solve(theta, data, loss, rho, div, eps, false)
}

fn full_solve<L: Loss>(
    theta: &ModelParams,
    data: &Dataset,
    loss: &L,
    rho: f64,
    div: PhiDivergence,
    eps: f64,
    guard: bool,
) -> Result<InnerSolution> {
    theta.check_dim(data)?;
    let idx: Vec<usize> = (0..data.n_rows()).collect();
    let z = losses_at(loss, theta, data, &idx);
    let problem = InnerProblem::new(&z, rho, div, eps)?;
    if guard {
        problem.require_nondegenerate()?;
    }
    solve_inner(&problem)
}

/// Losses sorted in decreasing order plus prefix sums; answers `λ(α)` and
/// `D(α)` queries for the active-constraint case.
struct DualProfile<'a> {
    div: PhiDivergence,
    sorted: &'a [f64],
    prefix: Vec<f64>,
}

impl<'a> DualProfile<'a> {
    fn new(div: PhiDivergence, sorted: &'a [f64]) -> Self {
        let mut prefix = Vec::with_capacity(sorted.len() + 1);
        let mut acc = 0.0;
        prefix.push(0.0);
        for &v in sorted {
            acc += v;
            prefix.push(acc);
        }
        Self { div, sorted, prefix }
    }

    /// Multiplier making `(1/M) Σ s_m = 1` at fixed `alpha`.
    fn lambda(&self, alpha: f64) -> f64 {
        let m = self.sorted.len();
        match self.div.kind() {
            DivergenceKind::ModifiedChiSquared => {
                // s_m = (1 + (z_m − λ)/(2α))_+ ; with the top k active,
                // k + (S_k − kλ)/(2α) = M.
                let two_alpha = 2.0 * alpha;
                let mut lambda = self.sorted[0] + two_alpha * (1.0 - m as f64);
                for k in 1..=m {
                    let cand = (self.prefix[k] - two_alpha * (m - k) as f64) / k as f64;
                    if self.sorted[k - 1] + two_alpha > cand {
                        lambda = cand;
                    } else {
                        break;
                    }
                }
                lambda
            }
            DivergenceKind::KullbackLeibler => {
                let top = self.sorted[0];
                let mean_exp = self
                    .sorted
                    .iter()
                    .map(|&v| ((v - top) / alpha).exp())
                    .sum::<f64>()
                    / m as f64;
                top + alpha * mean_exp.ln()
            }
        }
    }

    /// `s = M p` for one loss value: `(φ')⁻¹((z − λ)/α)`, or zero when the
    /// argument falls below `φ'(0)`.
    fn scaled_weight(&self, z: f64, alpha: f64, lambda: f64) -> f64 {
        let y = (z - lambda) / alpha;
        match self.div.phi_prime_at_zero() {
            ZeroSlope::Finite(slope) if y <= slope => 0.0,
            _ => self.div.phi_prime_inverse(y),
        }
    }

    /// Divergence of the optimal weights at `alpha`, and the matching `λ`.
    fn divergence(&self, alpha: f64) -> (f64, f64) {
        let lambda = self.lambda(alpha);
        let m = self.sorted.len() as f64;
        let total: f64 = match self.div.kind() {
            DivergenceKind::KullbackLeibler => self
                .sorted
                .iter()
                .map(|&v| {
                    let u = (v - lambda) / alpha;
                    let s = u.exp();
                    s * u - s + 1.0
                })
                .sum(),
            DivergenceKind::ModifiedChiSquared => self
                .sorted
                .iter()
                .map(|&v| self.div.phi(self.scaled_weight(v, alpha, lambda)))
                .sum(),
        };
        (total / m, lambda)
    }
}

/// Finds `α > 0` with `|D(α) − ρ| ≤ ε`. `D` decreases in `α`, from the
/// vertex divergence as `α → 0` to zero as `α → ∞`.
fn bisect_alpha(profile: &DualProfile<'_>, rho: f64, eps: f64) -> Result<(f64, f64, f64, usize)> {
    let eval = |alpha: f64| {
        let (d, lambda) = profile.divergence(alpha);
        (d - rho, lambda, d)
    };
    let mut iters = 0usize;

    let mut lo = ALPHA_LO_START;
    let mut hi = ALPHA_HI_START;
    let (mut f_hi, lambda_hi, d_hi) = eval(hi);
    if f_hi.abs() <= eps {
        return Ok((hi, lambda_hi, d_hi, 0));
    }
    while f_hi > 0.0 {
        lo = hi;
        hi *= 2.0;
        iters += 1;
        if iters > MAX_EXPANSIONS || !hi.is_finite() {
            return Err(bracket_error(lo, hi, f_hi, f_hi));
        }
        let (f, lambda, d) = eval(hi);
        if f.abs() <= eps {
            return Ok((hi, lambda, d, iters));
        }
        f_hi = f;
    }
    let (mut f_lo, lambda_lo, d_lo) = eval(lo);
    if f_lo.abs() <= eps {
        return Ok((lo, lambda_lo, d_lo, iters));
    }
    while f_lo <= 0.0 {
        // Near-ties can make tiny α already feasible; shrink toward zero.
        hi = lo;
        f_hi = f_lo;
        lo *= 1e-3;
        iters += 1;
        if lo < f64::MIN_POSITIVE {
            return Err(bracket_error(lo, hi, f_lo, f_hi));
        }
        let (f, lambda, d) = eval(lo);
        if f.abs() <= eps {
            return Ok((lo, lambda, d, iters));
        }
        f_lo = f;
    }

    for _ in 0..MAX_BISECTIONS {
        iters += 1;
        let mid = (lo * hi).sqrt();
        if mid <= lo || mid >= hi {
            break;
        }
        let (f, lambda, d) = eval(mid);
        if f.abs() <= eps {
            return Ok((mid, lambda, d, iters));
        }
        if f > 0.0 {
            lo = mid;
            f_lo = f;
        } else {
            hi = mid;
            f_hi = f;
        }
    }
    Err(bracket_error(lo, hi, f_lo, f_hi))
}

fn bracket_error(lo: f64, hi: f64, f_lo: f64, f_hi: f64) -> DrlError {
    DrlError::BracketFailure {
        what: "alpha",
        lo,
        hi,
        f_lo,
        f_hi,
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// KKT residuals of a returned solution, each reported as a nonnegative
/// violation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktResiduals {
    /// `|Σ p − 1|`
    pub simplex: f64,
    /// `max(0, −min p)`
    pub negativity: f64,
    /// `max(0, D(p) − ρ)`
    pub budget: f64,
    /// `max |z_m − λ − α φ'(M p_m)|` over `p_m > 0`, bisection case only.
    pub stationarity: f64,
    /// `max(0, z_m − λ − α φ'(0))` over `p_m = 0`.
    pub dual: f64,
    /// `|D(p) − ρ|` when `α > 0`, else zero.
    pub slackness: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        [
            self.simplex,
            self.negativity,
            self.budget,
            self.stationarity,
            self.dual,
            self.slackness,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

pub fn kkt_residuals(problem: &InnerProblem<'_>, sol: &InnerSolution) -> KktResiduals {
    let div = problem.divergence;
    let z = problem.z;
    let mf = z.len() as f64;
    let d = div.divergence_from_uniform(&sol.p);
    let mut stationarity: f64 = 0.0;
    let mut dual: f64 = 0.0;
    if sol.case_taken == CaseTaken::Bisection {
        for (&zm, &pm) in z.iter().zip(&sol.p) {
            if pm > 0.0 {
                let r = zm - sol.lambda - sol.alpha * div.phi_prime(mf * pm);
                stationarity = stationarity.max(r.abs());
            } else if let ZeroSlope::Finite(slope) = div.phi_prime_at_zero() {
                dual = dual.max(zm - sol.lambda - sol.alpha * slope);
            }
        }
    }
    KktResiduals {
        simplex: (sol.p.iter().sum::<f64>() - 1.0).abs(),
        negativity: (-sol.p.iter().copied().fold(f64::INFINITY, f64::min)).max(0.0),
        budget: (d - problem.rho_target).max(0.0),
        stationarity,
        dual,
        slackness: if sol.alpha > 0.0 {
            (d - problem.rho_target).abs()
        } else {
            0.0
        },
    }
}
