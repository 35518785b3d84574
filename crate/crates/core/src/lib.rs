//! Distributionally robust learning (DRL) for binary linear classifiers.
//!
//! The robust loss of a parameter vector `θ` is the worst-case expected loss
//! over all reweightings `p` of the training set that stay within a
//! φ-divergence ball of radius `ρ` around the uniform distribution:
//!
//! ```text
//! R(θ) = max { Σ p_n l(θ, ξ_n) : (1/N) Σ φ(N p_n) ≤ ρ,  Σ p_n = 1,  p ≥ 0 }
//! ```
//!
//! Training runs stochastic subgradient descent on `R`. The gradient is
//! estimated from small random subsets of the data; a randomized multi-level
//! (Giles) correction removes the bias that fixed-size subsets introduce.
//!
//! Crate layout:
//!
//! | module | contents |
//! |--------|----------|
//! | [`types`], [`rng`] | datasets, parameters, traces, seeded randomness |
//! | [`divergence`] | modified χ² and KL descriptors, feasibility ceiling, `ρ_M` inflation |
//! | [`inner`] | exact solver for the weighted inner maximization |
//! | [`sampling`] | truncated geometric levels and without-replacement subsets |
//! | [`loss`] | logistic loss, gradients, misclassification |
//! | [`estimators`] | subsampled and Giles gradient estimators |
//! | [`optim`] | GSSG, PSSG, FSG and fixed-batch SGD |
//! | [`erm`] | regularized ERM baseline tuned by k-fold CV |
//! | [`data`] | LIBSVM / CSV loaders and synthetic workloads |
//! | [`harness`] | experiment configs, trace/summary CSV output |
//! | [`oracles`] | brute-force references (feature `oracles`) |

// `!(x > 0.0)` is used deliberately so that NaN inputs are rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod divergence;
pub mod erm;
pub mod error;
pub mod estimators;
pub mod harness;
pub mod inner;
pub mod loss;
#[cfg(feature = "oracles")]
pub mod oracles;
pub mod optim;
pub mod rng;
pub mod sampling;
pub mod stats;
pub mod types;

pub use divergence::{DivergenceKind, PhiDivergence};
pub use error::{DrlError, Result};
pub use estimators::{GradientEstimate, RobustParams};
pub use inner::{solve_inner, CaseTaken, InnerProblem, InnerSolution};
pub use loss::{LogisticLoss, Loss};
pub use optim::{Method, OptimizerConfig, StepSchedule};
pub use rng::RngState;
pub use sampling::LevelDistribution;
pub use types::{Dataset, ModelParams, RunTrace, SparseRow, TraceRecord};
