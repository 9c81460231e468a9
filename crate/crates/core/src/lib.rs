//! Numerical solvers for mean field games of controls on the flat torus.
//!
//! The crate is organized bottom-up:
//! - [`domain`]: grids, fields and finite-difference stencils
//! - [`models`]: Lagrangians, law summaries, running and terminal costs
//! - [`legendre`]: convex conjugates, closed form or numeric
//! - [`fixed_point`]: the per-time fixed point on the joint law
//! - [`pde`]: semi-implicit HJB and conservative Fokker-Planck steps
//! - [`coupler`]: the outer forward-backward iteration with continuation in `theta`
//! - [`drift`]: general controlled drifts via the inverse control map
//! - [`audit`]: growth, monotonicity and drift diagnostics

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod audit;
pub mod coupler;
pub mod domain;
pub mod drift;
pub mod error;
pub mod fixed_point;
pub mod legendre;
pub mod linalg;
pub mod models;
pub mod pde;

pub use error::{MfgcError, Result};
