//! Numerical laboratory for the mutual intersection measure of `p`
//! independent killed Brownian motions.

// `!(x > 0.0)` is used on purpose so that NaN inputs are rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod constants;
pub mod error;
pub mod geometry;
pub mod grid;
pub mod heat_kernel;
pub mod intersection;
pub mod moment_oracle;
pub mod path_sim;
pub mod quadrature;
pub mod rate_solver;
pub mod rng;
pub mod special;
pub mod stable_ext;

pub use error::{ImlError, Result};
pub use geometry::{make_lattice, DomainKind, DomainSpec, Lattice};
pub use grid::GridField;
