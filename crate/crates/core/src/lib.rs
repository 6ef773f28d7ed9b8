//! Multivariate extreme-value models and counterfactual event attribution.
//!
//! Three dependence models for threshold exceedances (multivariate generalized
//! Pareto, exponential factor copula, Huser–Wadsworth), their tail dependence
//! coefficients, tail-probability estimators for weighted sums, causal
//! attribution metrics with bootstrap intervals, homogeneity-based site
//! clustering and two misspecification simulation studies.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attribution;
pub mod cli;
pub mod data;
pub mod dependence;
pub mod efcm;
pub mod error;
pub mod hw;
pub mod io;
pub mod mgpd;
pub mod numerics;
pub mod regions;
pub mod simharness;
pub mod univariate;

pub use error::{Error, Result};
