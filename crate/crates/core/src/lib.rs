//! Stochastic continuum-armed bandits whose rewards depend on `k` unknown
//! linear parameters of a `d`-dimensional strategy.
//!
//! The algorithm (CAB-LP) runs in two phases. Phase 1 spends part of the
//! budget on finite-difference reward queries, which are linear measurements
//! of the rank-k matrix `AᵀG`; a matrix Dantzig selector recovers it and its
//! left singular vectors estimate the row space of `A`. Phase 2 runs a
//! grid-discretized UCB-1 on the recovered k-dimensional subspace.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod env;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod orchestrator;
pub mod phase2;
pub mod recovery;
pub mod sampling;

pub use error::{Error, Result};
pub use env::{EnvDescriptor, Environment, Family, LinearParamMatrix, MeanRewardSpec};
pub use harness::{run_experiment, ExperimentConfig, SweepSummary};
pub use orchestrator::{run_cablp, LambdaRule, PlanMode, PracticalPlan, RunConfig, RunRecord};
