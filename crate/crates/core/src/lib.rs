//! Random walks in heavy-tailed random conductances.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod acceptance;
pub mod bessel;
pub mod cli;
pub mod error;
pub mod lattice;
pub mod layered;
pub mod numeric;
pub mod oracle;
pub mod parallel;
pub mod rng;
pub mod rwrs;
pub mod scenery;
pub mod stats;
pub mod theory;
pub mod walk;

pub use error::{Error, Result};
