#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod bounds;
pub mod clarkocone;
pub mod error;
pub mod fastmath;
pub mod gaussian;
pub mod harness;
pub mod kernel;
mod lanes;
pub mod localtime;
pub mod quadrature;
pub mod rng;
pub mod stats;

pub use error::{Error, Result};
