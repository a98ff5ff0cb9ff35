//! Primal-dual saddle-point solvers for entropy-regularized tabular MDPs.
//!
//! The crate covers exact reference solutions ([`oracle`]), the regularized
//! Lagrangian and its geometry ([`lagrangian`]), a synchronous solver driven
//! by a generative model ([`sync`]), a single-trajectory solver with
//! structured experience replay ([`asynchronous`], [`replay`]), theory-facing
//! diagnostics ([`diagnostics`]) and a multi-seed experiment harness
//! ([`experiment`]).

// `!(x > 0.0)` is used on purpose throughout: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod asynchronous;
pub mod diagnostics;
pub mod error;
pub mod experiment;
pub mod lagrangian;
pub mod linalg;
pub mod mdp;
pub mod metrics;
pub mod oracle;
pub mod replay;
pub mod schedule;
pub mod sync;
pub mod trace;

pub use error::{Error, Result};
