//! Simulation and verification toolkit for the nonlocal monostable equation
//!
//! ```text
//! ∂ₜu = κ (a ∗ u) − m u − u G(u)
//! ```
//!
//! with heavy-tailed dispersal kernels `a`, including front tracking,
//! predicted front laws and numeric checks of the comparison machinery.

// `!(x > 0.0)` guards reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod evolve;
pub mod experiments;
pub mod front;
pub mod grid;
pub mod quad;
pub mod reaction;
pub mod suites;
pub mod tailprofiles;
pub mod theory;

pub use error::{Error, Result};
