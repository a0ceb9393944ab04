//! Stochastic homogenization of thin elastic plates in the bending regime.
//!
//! The crate samples random two-phase media, solves the periodic cell problem
//! for the effective bending form `Q^γ`, checks the Helmholtz-type splits the
//! theory rests on, estimates ergodic averages, and evaluates the nonlinear
//! plate energy along a recovery sequence.

// `!(x > 0.0)` also rejects NaN; index loops mirror the tensor notation.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::len_without_is_empty)]

pub mod cell_solver;
pub mod cg;
pub mod decomposition;
pub mod ergodic_stats;
pub mod error;
pub mod exec;
pub mod material;
pub mod microstructure;
pub mod recovery;

pub use error::{Error, Result};
pub use exec::{ExecPolicy, Execution};
pub use nalgebra;
