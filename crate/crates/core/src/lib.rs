//! Axisymmetric Navier–Stokes with Navier slip on staircase cusp domains,
//! solved in the reduced variables `h = v_theta / r` and `Omega = omega_theta / r`,
//! with diagnostics for the a priori estimates and estimators for the
//! geometric constants that enter them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod diagnostics;
pub mod domain;
pub mod elliptic;
pub mod error;
pub mod evolve;
pub mod field;
pub mod inequalities;
pub mod mms;
pub mod run;

pub use error::{Error, Result};
