//! Long-time behaviour of waves in periodic media.
//!
//! The crate provides a Bloch cell-problem solver, the fourth-order dispersive
//! effective model derived from it, finite-difference solvers for both the
//! heterogeneous and the effective wave equations, spectral reference solutions,
//! and an experiment harness that compares them.

pub mod bloch;
pub mod config;
pub mod datum;
pub mod dispersion;
pub mod effective;
pub mod eigen;
pub mod error;
pub mod grid;
pub mod harness;
pub mod hetero;
pub mod medium;
pub mod oracle;
pub mod quadrature;

pub use error::{Error, Result};
