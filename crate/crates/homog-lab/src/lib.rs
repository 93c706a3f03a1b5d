//! Numerical laboratory for periodic homogenization of quasilinear monotone
//! operators of p-Laplace type.
//!
//! The crate computes the constructive objects of the theory (correctors,
//! flux correctors, the homogenized operator, the two-scale expansion) and
//! measures, on desk-scale grids, the ε-uniform regularity estimates
//! (Calderón–Zygmund, large-scale Lipschitz, large-scale Hölder, excess
//! decay) that hold for such operators.
//!
//! Module map:
//! - [`vcalc`]: V- and W-function evaluation plus inequality audits.
//! - [`operators`]: the operator zoo and assumption verifiers.
//! - [`grid`]: torus grids, Dirichlet meshes, fields, norms, maximal functions.
//! - [`solver`]: sparse matrices, CG, Newton/Kačanov machinery.
//! - [`cell`]: corrector and flux-corrector solves on the torus.
//! - [`effective`]: the homogenized operator, tabulation, structure checks.
//! - [`bvp`]: Dirichlet solvers for the oscillating and effective equations.
//! - [`twoscale`]: cube partitions, the two-scale expansion, rate fits.
//! - [`regularity`]: CZ / Lipschitz / Hölder / excess-decay measurements.
//! - [`config`], [`report`], [`pipeline`]: experiment plumbing for the CLI.

pub mod vect;
pub mod params;
pub mod error;
pub mod par;
pub mod vcalc;
pub mod operators;
pub mod grid;
pub mod solver;
pub mod cell;
pub mod effective;
pub mod bvp;
pub mod twoscale;
pub mod regularity;
pub mod config;
pub mod report;
pub mod pipeline;

pub use error::{Error, Result};
pub use params::ExponentParams;
pub use vect::Vect;
