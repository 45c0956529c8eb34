//! Data-driven reduced-order Koopman modeling and robust linear MPC.
//!
//! The pipeline is: simulate the reactor-separator plant ([`plant`]), pick
//! lifting functions with a Kalman-filtered sparse regression ([`lifting`]),
//! fit full- and reduced-order Koopman predictors ([`koopman`]), and close
//! the loop with a condensed-QP MPC ([`mpc`], [`qp`]). [`experiment`] wires
//! the stages into reproducible runs.

// `!(a < b)` comparisons are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod experiment;
pub mod koopman;
pub mod lifting;
pub mod mpc;
pub mod linalg;
pub mod plant;
pub mod qp;
pub mod scaling;

pub use error::{Error, Result};
