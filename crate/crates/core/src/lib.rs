// Index loops mirror the stencils; `!(x >= 0.0)` is how NaN gets rejected.
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod flow;
pub mod distance;
pub mod grid;
pub mod harness;
pub mod optimizer;
pub mod radon;
pub mod regularizer;
pub mod solution_map;
mod lattice;

pub use error::{Error, Result};
