//! Homotopy-analysis linearization of the 1D viscous Burgers equation.
//!
//! The crate builds the deformation hierarchy, closes it into a linear system
//! `dv/dt = A v + b`, and integrates that system with classical Euler schemes
//! or a dense statevector emulation of LCU time-marching circuits.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diffusion;
pub mod dns;
pub mod embedding;
pub mod error;
pub mod grid;
pub mod homotopy;
pub mod lcu;
pub mod marching;

pub use error::{Error, Result};
pub use grid::{BoundaryCondition, FdOperator, Grid1D};
