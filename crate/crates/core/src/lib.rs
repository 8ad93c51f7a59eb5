//! Hybrid-control-trial analysis with a nonparametric sensitivity analysis
//! for violated mean exchangeability.
//!
//! A hybrid control trial augments a randomized trial's control arm with
//! external control data. Pooling buys efficiency but rests on mean
//! exchangeability of the controls, and any violation acts exactly like an
//! unobserved confounder. This crate estimates the trial-specific average
//! treatment effect by cross-fitted debiased machine learning, bounds the
//! worst-case omitted-variable bias from posited confounding strengths,
//! builds uniform confidence regions over the bound, and ships a simulation
//! harness that validates the whole pipeline against analytic oracles.
//!
//! Pipeline sketch:
//!
//! 1. [`data`] loads and validates the (D, A, X, Y) observations.
//! 2. [`crossfit`] produces out-of-fold nuisance predictions using the
//!    learners in [`learners`].
//! 3. [`estimation`] turns fits into point estimates, influence values,
//!    the bound scale S, and the bias bound B.
//! 4. [`sensitivity`] forms bound pairs, uniform confidence regions,
//!    robustness values, contour grids, and benchmarked strengths.
//! 5. [`simulation`] replicates the whole analysis over a synthetic trial
//!    generator with closed-form ground truth.

pub mod config;
pub mod crossfit;
pub mod data;
pub mod error;
pub mod estimation;
pub mod learners;
pub mod pipeline;
pub mod report;
pub mod sensitivity;
pub mod simulation;
pub mod stats;

pub use error::{Error, ErrorKind, Result};
