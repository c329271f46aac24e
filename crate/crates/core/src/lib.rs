//! Finite-difference linear elasticity on block-structured adaptively
//! refined node-centered grids, solved with geometric multigrid.
//!
//! The crate is organized bottom-up: `mesh` provides the AMR hierarchy and
//! data motion, `tensor` the elastic stiffness algebra, `op` the discrete
//! elasticity operator, `mg` the multigrid solver, `problems` the bundled
//! model setups, and `driver` the configuration and output plumbing used by
//! the command line tool.

// Index loops mirror the stencil math; iterator rewrites would obscure it.
// Comparisons like !(x > 0.0) are deliberate so NaN fails the check.
#![allow(clippy::needless_range_loop)]
#![allow(clippy::explicit_counter_loop)]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod driver;
pub mod error;
pub mod mesh;
pub mod mg;
pub mod op;
pub mod problems;
pub mod tensor;

pub use error::{Error, Result};
