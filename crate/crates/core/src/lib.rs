//! Fairness-constrained, doubly robust estimation of conditional average
//! treatment effects (CATE).
//!
//! The CATE `τ(W) = E[Y¹ − Y⁰ | W]` is projected onto a finite basis `b(W)`
//! by solving the convex quadratic program
//!
//! ```text
//!     minimize    ½ βᵀ Pₙ[b bᵀ] β − βᵀ Pₙ[(φ₁ − φ₀) b]
//!     subject to  |βᵀ Pₙ[uf_j b]| ≤ δ_j,   j = 1..m
//! ```
//!
//! where `φ_a` are cross-fitted uncentered efficient influence values and
//! `uf_j` are fairness functions (statistical parity, conditional parity,
//! balance for the positive class, or a user-supplied smooth counterfactual
//! function). The fitted `τ̂ = β̂ᵀb` drives treatment policies whose welfare,
//! regret and unfairness are reported by [`policy`].
//!
//! The pipeline, module by module:
//!
//! 1. [`dataset`]: observations `(Y, A, S, X)`, CSV ingestion, fold assignment.
//! 2. [`basis`]: polynomial basis expansion and Gram matrix.
//! 3. [`nuisance`]: cross-fitted outcome regressions and propensity score.
//! 4. [`moments`]: doubly robust, plug-in and IPW moment vectors.
//! 5. [`fairness`]: fairness moment vectors.
//! 6. [`qp`]: the constrained least-squares program.
//! 7. [`policy`], [`inference`]: policies, welfare, bootstrap intervals.
//! 8. [`synth`], [`experiments`], [`cli`]: simulation and orchestration.
//!
//! ```
//! use faircate::{basis::BasisSpec, estimate::Estimator, fairness::FairnessCriterion, synth};
//!
//! let sample = synth::generate(600, 11, synth::Variant::Paper).unwrap();
//! let fit = Estimator::new(BasisSpec::new(3))
//!     .criterion(FairnessCriterion::independence(0.0))
//!     .seed(11)
//!     .fit(&sample.dataset)
//!     .unwrap();
//! // δ = 0: the group means of τ̂ coincide.
//! assert!(fit.constraint_residuals()[0].abs() < 1e-8);
//! ```

pub mod basis;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod estimate;
pub mod experiments;
pub mod fairness;
pub mod inference;
pub mod learners;
pub mod moments;
pub mod nuisance;
pub mod policy;
pub mod qp;
pub mod stats;
pub mod synth;

pub use error::{Error, Result};
