//! Structure-preserving adjoint systems for ODEs and semi-explicit index-1 DAEs.
//!
//! The crate builds (augmented) adjoint equations for a base problem, integrates
//! them with (pre)symplectic partitioned Runge–Kutta schemes, and checks the
//! discrete adjoint-variational conservation laws that make those schemes
//! suitable for sensitivity analysis:
//!
//! - [`systems`]: problem definitions (vector fields, DAEs, costs) and a registry
//!   of analytic test problems.
//! - [`tableau`]: Butcher data and the symplectic-adjoint coefficient transform.
//! - [`solver`]: damped Newton and dense LU.
//! - [`adjoint`]: adjoint/tangent systems, index reduction, multiplier solves.
//! - [`integrate`]: forward, tangent, and momentum steps plus full trajectories.
//! - [`sensitivity`]: terminal and running-cost sensitivities with oracles.
//! - [`verify`]: conservation audits, the reduce/adjoint/discretize cube,
//!   convergence orders and the constraint-algorithm check.
//! - [`ocp`]: optimal-control extremals by single shooting.
//!
//! Batch work (direction sweeps, finite-difference probes, cube routes, step-size
//! ladders) goes through [`par`], which uses rayon when the `parallel` feature
//! is enabled and plain iterators otherwise.

// `!(x > 0.0)` rejects NaN on purpose; stage loops index several parallel arrays.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::too_many_arguments)]

pub mod adjoint;
pub mod error;
pub mod integrate;
pub mod io;
pub mod ocp;
pub mod par;
pub mod sensitivity;
pub mod solver;
pub mod systems;
pub mod tableau;
pub mod verify;

pub use error::{Error, Result};

/// Dense real column vector.
pub type Vector = nalgebra::DVector<f64>;
/// Dense real matrix.
pub type Matrix = nalgebra::DMatrix<f64>;
