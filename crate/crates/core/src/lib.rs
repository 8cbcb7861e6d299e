//! Generalized feedback Nash equilibria for constrained discrete-time
//! dynamic games.
//!
//! The crate solves equality-constrained LQ games exactly with a stagewise
//! backward factorization, inequality-constrained LQ games with an
//! active-set method, and nonlinear games approximately with a
//! sequential-LQ method and a merit-function line search.

// Stage loops index several parallel per-stage arrays at once, and the
// negated comparisons deliberately reject NaN.
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod active_set;
pub mod cli;
pub mod error;
pub mod game_model;
pub mod iteration_log;
pub mod linalg;
pub mod lq_core;
pub mod sqp;
pub mod verification;
pub mod working_set;

pub use error::{Error, Result};
