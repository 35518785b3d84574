//! φ-divergence descriptors for the ambiguity set.
//!
//! `D_φ(P, U_M) = (1/M) Σ φ(M p_m)` measures how far a weight vector on `M`
//! points is from uniform. Two generators are shipped:
//!
//! | kind | φ(s) | φ'(s) | (φ')⁻¹(y) | φ(0) | φ'(0) |
//! |------|------|-------|-----------|------|-------|
//! | modified χ² | (s − 1)² | 2(s − 1) | 1 + y/2 | 1 | −2 |
//! | KL | s ln s − s + 1 | ln s | eʸ | 1 | −∞ |

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{DrlError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DivergenceKind {
    ModifiedChiSquared,
    KullbackLeibler,
}

/// Slope of φ at zero. KL has an infinite slope there, which means the
/// optimal weights never hit the `p ≥ 0` bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ZeroSlope {
    Finite(f64),
    NegInfinity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct PhiDivergence {
    kind: DivergenceKind,
}

impl PhiDivergence {
    pub const CHI_SQUARED: PhiDivergence = PhiDivergence {
        kind: DivergenceKind::ModifiedChiSquared,
    };
    pub const KL: PhiDivergence = PhiDivergence {
        kind: DivergenceKind::KullbackLeibler,
    };

    pub fn new(kind: DivergenceKind) -> Self {
        Self { kind }
    }

    pub fn kind(&self) -> DivergenceKind {
        self.kind
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            DivergenceKind::ModifiedChiSquared => "chi2",
            DivergenceKind::KullbackLeibler => "kl",
        }
    }

    /// φ(s) for `s ≥ 0`; `φ(0)` is the limit value.
    pub fn phi(&self, s: f64) -> f64 {
        match self.kind {
            DivergenceKind::ModifiedChiSquared => (s - 1.0) * (s - 1.0),
            DivergenceKind::KullbackLeibler => {
                if s == 0.0 {
                    1.0
                } else {
                    s * s.ln() - s + 1.0
                }
            }
        }
    }

    pub fn phi_prime(&self, s: f64) -> f64 {
        match self.kind {
            DivergenceKind::ModifiedChiSquared => 2.0 * (s - 1.0),
            DivergenceKind::KullbackLeibler => s.ln(),
        }
    }

    pub fn phi_prime_inverse(&self, y: f64) -> f64 {
        match self.kind {
            DivergenceKind::ModifiedChiSquared => 1.0 + 0.5 * y,
            DivergenceKind::KullbackLeibler => y.exp(),
        }
    }

    pub fn phi_at_zero(&self) -> f64 {
        1.0
    }

    pub fn phi_prime_at_zero(&self) -> ZeroSlope {
        match self.kind {
            DivergenceKind::ModifiedChiSquared => ZeroSlope::Finite(-2.0),
            DivergenceKind::KullbackLeibler => ZeroSlope::NegInfinity,
        }
    }

    /// `(1/M) Σ φ(M p_m)` for a weight vector of length `M`.
    pub fn divergence_from_uniform(&self, p: &[f64]) -> f64 {
        let m = p.len() as f64;
        p.iter().map(|&pi| self.phi(m * pi)).sum::<f64>() / m
    }
}

impl Default for PhiDivergence {
    fn default() -> Self {
        PhiDivergence::CHI_SQUARED
    }
}

impl fmt::Display for PhiDivergence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PhiDivergence {
    type Err = DrlError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "chi2" | "chi-squared" | "chisquared" => Ok(Self::CHI_SQUARED),
            "kl" | "kullback-leibler" => Ok(Self::KL),
            other => Err(DrlError::invalid(format!(
                "unknown divergence '{other}' (expected 'chi2' or 'kl')"
            ))),
        }
    }
}

impl TryFrom<String> for PhiDivergence {
    type Error = DrlError;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<PhiDivergence> for String {
    fn from(d: PhiDivergence) -> String {
        d.name().to_owned()
    }
}

/// Feasibility ceiling on ρ for `n` support points: the divergence of the
/// weight vector that drops one point and spreads its mass evenly over the
/// rest. Any `ρ` strictly below it keeps every optimal weight positive.
pub fn rho_bar(div: PhiDivergence, n: usize) -> Result<f64> {
    if n < 2 {
        return Err(DrlError::invalid(format!("rho_bar needs n >= 2, got {n}")));
    }
    let nf = n as f64;
    Ok((1.0 - 1.0 / nf) * div.phi(nf / (nf - 1.0)) + div.phi_at_zero() / nf)
}

/// Divergence budget for a size-`m` subproblem drawn from `n` points:
/// `ρ + c (1/m − 1/n)^((1−δ)/2)`. Equals `ρ` exactly when `m == n`.
pub fn rho_inflated(rho: f64, m: usize, n: usize, c: f64, delta: f64) -> Result<f64> {
    if m == 0 || m > n {
        return Err(DrlError::invalid(format!(
            "subset size {m} must lie in 1..={n}"
        )));
    }
    if !(rho > 0.0) {
        return Err(DrlError::invalid(format!("rho must be positive, got {rho}")));
    }
    if !(c > 0.0) {
        return Err(DrlError::invalid(format!("c must be positive, got {c}")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(DrlError::invalid(format!("delta must lie in (0, 1), got {delta}")));
    }
    if m == n {
        return Ok(rho);
    }
    let gap = 1.0 / m as f64 - 1.0 / n as f64;
    Ok(rho + c * gap.powf(0.5 * (1.0 - delta)))
}
