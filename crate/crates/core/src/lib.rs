//! Finite-horizon model order reduction for continuous-time linear
//! time-varying (LTV) systems.
//!
//! The crate computes gramians of LTV systems through differential Lyapunov
//! equations, evaluates the finite-horizon H2 error between a full and a
//! reduced system, and reduces systems either by finite-horizon balanced
//! truncation or by a two-sided projection iteration (TSIA) whose fixed
//! points satisfy the first-order optimality conditions of that error.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bt;
pub mod checks;
pub mod cli;
pub mod dle;
pub mod error;
pub mod expr;
pub mod h2norm;
pub mod ltv;
mod ode;
pub mod random;
pub mod timegrid;
pub mod tsia;

pub use error::{Error, Result};
pub use ltv::{ArForm, LtvSystem, ReducedOrderModel, ReductionMethod, SignalTrajectory};
pub use timegrid::{MatrixTrajectory, TimeGrid};
