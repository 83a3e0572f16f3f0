//! Checks of the discrete conservation laws and of the commuting
//! reduce/adjoint/discretize diagram, convergence orders against closed forms,
//! and the one-step termination of the constraint algorithm.

mod audit;
mod convergence;
mod cube;
mod pca;

pub use audit::{audit_invariants, Audit, AuditRow};
pub use convergence::{convergence_order, ConvergenceReport, ConvergenceRow, Reference};
pub use cube::{discrete_adjoint_step, naturality_check, CubePair, CubePath, CubeReport, CUBE_PATHS};
pub use pca::{pca_check, PcaReport, PCA_FD_STEP, PCA_TANGENCY_TOL};
