//! Regularized optimal transport (ROT) pooling.
//!
//! A set of `N` samples with `D` features is pooled into a single `D`-vector by
//! first solving a regularized optimal transport problem between feature
//! dimensions and sample indices, then taking per-dimension conditional
//! expectations under the resulting joint distribution:
//!
//! ```text
//! P* = argmin_{P in Ω}  <-X, P> + a0 <C(X,P), P> + a1 R(P)
//!                        + a2 KL(P 1 | p0) + a3 KL(P^T 1 | q0)
//! f(X) = (X ⊙ diag(P* 1)^-1 P*) 1
//! ```
//!
//! Two solvers are provided: a proximal-point scheme with a stabilized
//! (log-domain) Sinkhorn inner loop ([`sinkhorn`]), and a Bregman ADMM scheme
//! with closed-form log-domain updates ([`badmm`]). The [`pooling`] module
//! builds the pooling operator, the classic-pooling presets and hierarchical
//! compositions on top of them.
//!
//! The crate is `no_std` and only needs `alloc`.

#![no_std]
// `!(x >= 0.0)` is used on purpose so that NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod badmm;
mod error;
pub mod matrix;
pub mod numeric;
pub mod objective;
pub mod params;
pub mod pooling;
pub mod sinkhorn;
pub mod trace;
pub mod types;

pub use error::{Error, Result};
pub use matrix::Matrix;
pub use objective::{compute_covariances, rot_objective, rot_objective_with, structural_product};
pub use params::{constrain_params, PriorSpec, RawParams, RotParams, Smoothness};
pub use pooling::{
    classic_pool, hrotp, mixed_mean_max, mrotp, pool, rotp, solve, ClassicPool, FeatureMap,
    HierarchicalSpec, ParamTemplate, PoolPreset, PoolReport, PresetKind, SolverKind,
};
pub use trace::SolverTrace;
pub use types::{CovariancePair, SampleSet, TransportPlan};
