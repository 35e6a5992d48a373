//! Simulation and control of parabolic-trough solar fields.

// `!(x > 0.0)` is used on purpose so NaN fails the check too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ann;
pub mod auction;
pub mod defocus;
pub mod error;
pub mod harness;
pub mod models;
pub mod physics;

pub use error::{Error, Result};
