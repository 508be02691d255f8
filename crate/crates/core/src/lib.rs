//! Forward-curve dynamics in a weighted Sobolev space.
//!
//! Curves live on a uniform grid with a tail value. Coefficients act point-wise on
//! curve values, the noise is a truncated Q-Wiener process and paths are advanced by an
//! exponential Euler scheme on the mild formulation.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod girsanov;
pub mod noise;
pub mod operators;
pub mod pointwise;
pub mod projection;
pub mod solver;
pub mod space;

pub use error::{Error, Result};
pub use space::{Cone, CurveGrid, SpaceConfig};
