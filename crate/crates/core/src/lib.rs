//! Energy-stable discretization of a two-phase flow model with a nonlocal
//! Cahn-Hilliard phase field, a logarithmic potential and non-matched
//! densities, on a rectangle with no-slip walls.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod config;
pub mod diagnostics;
pub mod error;
pub mod flow;
pub mod grid;
pub mod initial;
pub mod kernel;
pub mod linalg;
pub mod nonlocal;
pub mod output;
pub mod potential;
pub mod smoothing;
pub mod spectral;
pub mod stepper;
pub mod study;

pub use error::{Error, Result};
pub use grid::{CellField, FaceField, Grid};
