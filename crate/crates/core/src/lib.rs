// Comparisons written as `!(x > 0.0)` deliberately reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod error;
pub mod exec;
pub mod kernel;
pub mod rng;

pub use error::{Error, Result};
pub mod dgfm;
pub mod diagnostics;
pub mod enkf;
pub mod lorenz96;
pub mod scoring;
pub mod smc;
