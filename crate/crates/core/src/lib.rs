//! Simulation, threshold computation and two-phase exact recovery for the
//! two-community Geometric Hidden Community Model.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod distributions;
pub mod divergence;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod harness;
pub mod io;
pub mod model;
pub mod oracle;
pub mod recovery;

pub use error::{GhcmError, Result};
