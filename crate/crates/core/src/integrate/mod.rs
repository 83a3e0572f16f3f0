//! Runge–Kutta discretisations of base, tangent and adjoint systems.
//!
//! The forward stage equations are solved in velocity form,
//!
//! ```text
//! Qⁱ = q₀ + h Σⱼ aᵢⱼ Vʲ,   Vⁱ = f(Qⁱ, Uⁱ),   0 = φ(Qⁱ, Uⁱ),
//! ```
//!
//! and the momenta use the symplectic-adjoint coefficients `ã`:
//!
//! ```text
//! Pⁱ = p₀ − h Σⱼ ãᵢⱼ (Dqfⱼᵀ Pʲ + Dqφⱼᵀ Λʲ [+ ∇qLⱼ])
//! p₁ = p₀ − h Σᵢ bᵢ  (Dqfᵢᵀ Pⁱ + Dqφᵢᵀ Λⁱ [+ ∇qLᵢ])
//! 0  = Dufᵢᵀ Pⁱ + Duφᵢᵀ Λⁱ [+ ∇uLᵢ]
//! ```
//!
//! The momentum equations are linear (affine with a running cost) in
//! `(P, Λ, p)`, so each momentum step is a single dense solve.

mod step;
mod sweep;

pub use step::{
    adjoint_step_forward, adjoint_step_type2, rk_step, rk_step_dae, rk_step_ode, stage_matrix, tangent_step, MomentumStep,
};
pub use sweep::{adjoint_sweep, forward_sweep, integrate_trajectory, tangent_sweep, Mode};
pub(crate) use step::{endpoint as endpoint_of, stage_positions as positions_of};

use crate::systems::Jacobians;
use crate::Vector;

/// Internal stages of one step.
#[derive(Debug, Clone, PartialEq)]
pub struct StageSet {
    pub q: Vec<Vector>,
    pub u: Vec<Vector>,
    /// Stage velocities `Vⁱ = f(Qⁱ, Uⁱ)`.
    pub v: Vec<Vector>,
    /// Momentum stages; empty until an adjoint sweep runs.
    pub p: Vec<Vector>,
    /// Multiplier stages; empty until an adjoint sweep runs.
    pub lambda: Vec<Vector>,
    /// Jacobians at `(Qⁱ, Uⁱ)`, shared by the tangent and momentum solves.
    pub jac: Vec<Jacobians>,
    /// Largest `‖φ(Qⁱ,Uⁱ)‖∞` over the stages.
    pub constraint_residual: f64,
}

/// Variational stages `(δQⁱ, δUⁱ, δVⁱ)` of one step.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentStages {
    pub dq: Vec<Vector>,
    pub du: Vec<Vector>,
    pub dv: Vec<Vector>,
}

/// Node values of a trajectory. Fields that a run did not compute are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjointDAEState {
    pub q: Vector,
    /// Algebraic variables at the node (empty for ODEs).
    pub u: Vector,
    pub p: Option<Vector>,
    pub lambda: Option<Vector>,
    pub dq: Option<Vector>,
    pub du: Option<Vector>,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub tableau: String,
    pub h: f64,
    pub times: Vec<f64>,
    pub states: Vec<AdjointDAEState>,
    pub stages: Vec<StageSet>,
    /// One entry per step after a tangent sweep, otherwise empty.
    pub tangent_stages: Vec<TangentStages>,
    /// Whether the momenta came from the augmented (running-cost) system.
    pub augmented: bool,
    /// Number of backward momentum sweeps performed on this trajectory.
    pub backward_sweeps: usize,
}

impl Trajectory {
    pub fn steps(&self) -> usize {
        self.stages.len()
    }

    pub fn final_state(&self) -> &AdjointDAEState {
        self.states.last().expect("trajectory always holds the initial node")
    }

    pub fn has_momenta(&self) -> bool {
        self.states.iter().all(|s| s.p.is_some())
    }

    pub fn has_tangent(&self) -> bool {
        self.states.iter().all(|s| s.dq.is_some())
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        let s0 = &self.states[0];
        let m = s0.lambda.as_ref().map_or(s0.u.len(), |l| l.len());
        (s0.q.len(), s0.u.len(), m)
    }
}
