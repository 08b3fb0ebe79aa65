//! Generalized fractional diffusion: forward simulation of
//! `d/dt [u - A (M * u)] = f` by eigenfunction expansion and product
//! integration, and regularized solvers for the associated inverse problems.
//!
//! Module map:
//! - [`kernels`]: completely monotone memory kernels, their moments, Laplace
//!   transforms, Bernstein densities and Sonine partners.
//! - [`laplace`]: contour inversion of Laplace transforms and the
//!   Mittag-Leffler function.
//! - [`operators`]: Dirichlet spectra of `-d2/dx2 - a` and distributed powers.
//! - [`volterra`]: time grids, convolution, second-kind solver, deconvolution.
//! - [`forward`]: sources, simulation and observations.
//! - [`inverse`]: kernel, product, history, functional and measure recovery.

// `!(x > 0.0)` guards reject NaN as well; index loops mirror the quadrature formulas.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod error;
pub mod forward;
pub mod inverse;
pub mod kernels;
pub mod laplace;
pub mod operators;
mod quad;
pub mod volterra;

pub use error::{Error, Result};
pub use kernels::{Measure, MemoryKernel, TabulatedKernel};
pub use volterra::{ModeTrajectory, TimeGrid};
