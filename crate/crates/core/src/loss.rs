//! Per-sample losses for linear models.

use crate::error::{DrlError, Result};
use crate::types::{Dataset, ModelParams, SparseRow};

/// Per-sample loss `l(θ, (x, y))` and its gradient. Optimizers and
/// estimators only see this interface.
pub trait Loss: Send + Sync {
    fn loss(&self, theta: &[f64], x: SparseRow<'_>, y: f64) -> f64;

    /// `out += scale * ∇_θ l(θ, (x, y))`
    fn add_grad(&self, theta: &[f64], x: SparseRow<'_>, y: f64, scale: f64, out: &mut [f64]);

    fn grad(&self, theta: &[f64], x: SparseRow<'_>, y: f64) -> Vec<f64> {
        let mut out = vec![0.0; theta.len()];
        self.add_grad(theta, x, y, 1.0, &mut out);
        out
    }
}

/// `l(θ; (x, y)) = log(1 + exp(−y θᵀx))`
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LogisticLoss;

impl Loss for LogisticLoss {
    fn loss(&self, theta: &[f64], x: SparseRow<'_>, y: f64) -> f64 {
        let margin = y * x.dot(theta);
        (-margin.abs()).exp().ln_1p() + (-margin).max(0.0)
    }

    fn add_grad(&self, theta: &[f64], x: SparseRow<'_>, y: f64, scale: f64, out: &mut [f64]) {
        let margin = y * x.dot(theta);
        x.axpy_into(-scale * y * sigmoid(-margin), out);
    }
}

/// Logistic function, evaluated without overflow for large `|t|`.
pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Loss values `l(θ, ξ_i)` for the listed rows.
pub fn losses_at<L: Loss>(loss: &L, theta: &ModelParams, data: &Dataset, idx: &[usize]) -> Vec<f64> {
    idx.iter()
        .map(|&i| loss.loss(&theta.0, data.row(i), data.label(i)))
        .collect()
}

/// `Σ_m p_m ∇l(θ, ξ_{idx_m})`
pub fn weighted_grad<L: Loss>(
    loss: &L,
    theta: &ModelParams,
    data: &Dataset,
    idx: &[usize],
    p: &[f64],
) -> Result<Vec<f64>> {
    if idx.len() != p.len() {
        return Err(DrlError::DimensionMismatch {
            expected: idx.len(),
            got: p.len(),
        });
    }
    theta.check_dim(data)?;
    let mut g = vec![0.0; theta.dim()];
    for (&i, &w) in idx.iter().zip(p) {
        if w != 0.0 {
            loss.add_grad(&theta.0, data.row(i), data.label(i), w, &mut g);
        }
    }
    Ok(g)
}

/// Fraction of rows with `sign(θᵀx) ≠ y`. A zero margin counts as an error.
pub fn misclassification(theta: &ModelParams, data: &Dataset) -> Result<f64> {
    theta.check_dim(data)?;
    let wrong = data
        .rows()
        .filter(|(x, y)| y * x.dot(&theta.0) <= 0.0)
        .count();
    Ok(wrong as f64 / data.n_rows() as f64)
}

/// Mean empirical loss over all rows.
pub fn empirical_loss<L: Loss>(loss: &L, theta: &ModelParams, data: &Dataset) -> f64 {
    data.rows().map(|(x, y)| loss.loss(&theta.0, x, y)).sum::<f64>() / data.n_rows() as f64
}
