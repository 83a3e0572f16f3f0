//! Adjoint and tangent systems, index-1 reduction and multiplier solves.
//!
//! For a DAE `q̇ = f(q,u)`, `0 = φ(q,u)` the adjoint system is
//!
//! ```text
//! q̇ = f(q,u)
//! ṗ = −Dqfᵀ p − Dqφᵀ λ [− ∇qL]
//! 0 = φ(q,u)
//! 0 = Dufᵀ p + Duφᵀ λ [+ ∇uL]
//! ```
//!
//! with Hamiltonian `H = ⟨p,f⟩ + ⟨λ,φ⟩ [+ L]`. ODEs are the special case with no
//! algebraic variables.

use std::cell::RefCell;

use crate::solver::{inf_norm, newton_solve, solve_dense, DenseLu, NewtonConfig};
use crate::systems::{DaeModel, HessenbergDAE, Jacobians, RunningCost, SemiExplicitDAE, VectorField};
use crate::{Error, Matrix, Result, Vector};

/// A base model together with an optional running cost.
#[derive(Debug, Clone)]
pub struct AdjointSystem<M> {
    pub base: M,
    pub running_cost: Option<RunningCost>,
}

pub type AdjointODESystem = AdjointSystem<VectorField>;
pub type AdjointDAESystem = AdjointSystem<SemiExplicitDAE>;

/// Residuals of the four adjoint equations at a point with given velocities.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjointResiduals {
    pub q_evolution: Vector,
    pub p_evolution: Vector,
    pub constraint: Vector,
    pub momentum_constraint: Vector,
}

impl AdjointResiduals {
    pub fn max_abs(&self) -> f64 {
        [&self.q_evolution, &self.p_evolution, &self.constraint, &self.momentum_constraint]
            .iter()
            .map(|v| inf_norm(v))
            .fold(0.0, f64::max)
    }
}

pub fn lift_ode(vf: VectorField, running_cost: Option<RunningCost>) -> AdjointODESystem {
    AdjointSystem { base: vf, running_cost }
}

pub fn lift_dae(dae: SemiExplicitDAE, running_cost: Option<RunningCost>) -> AdjointDAESystem {
    AdjointSystem { base: dae, running_cost }
}

impl<M: DaeModel> AdjointSystem<M> {
    pub fn is_augmented(&self) -> bool {
        self.running_cost.is_some()
    }

    fn cost_gradients(&self, q: &Vector, u: &Vector) -> Result<Option<(Vector, Vector)>> {
        self.running_cost.as_ref().map(|c| c.gradients(q, u)).transpose()
    }

    pub fn q_rhs(&self, q: &Vector, u: &Vector) -> Result<Vector> {
        self.base.f(q, u)
    }

    /// `ṗ = −Dqfᵀp − Dqφᵀλ [− ∇qL]`.
    pub fn p_rhs(&self, q: &Vector, u: &Vector, p: &Vector, lambda: &Vector) -> Result<Vector> {
        let j = self.base.jacobians(q, u)?;
        let mut r = -(j.dqf.tr_mul(p) + j.dqphi.tr_mul(lambda));
        if let Some((gq, _)) = self.cost_gradients(q, u)? {
            r -= gq;
        }
        Ok(r)
    }

    /// `Dufᵀp + Duφᵀλ [+ ∇uL]`, which vanishes on solutions.
    pub fn momentum_constraint(&self, q: &Vector, u: &Vector, p: &Vector, lambda: &Vector) -> Result<Vector> {
        let j = self.base.jacobians(q, u)?;
        let mut r = j.duf.tr_mul(p) + j.duphi.tr_mul(lambda);
        if let Some((_, gu)) = self.cost_gradients(q, u)? {
            r += gu;
        }
        Ok(r)
    }

    pub fn residuals(
        &self,
        q: &Vector,
        u: &Vector,
        p: &Vector,
        lambda: &Vector,
        q_dot: &Vector,
        p_dot: &Vector,
    ) -> Result<AdjointResiduals> {
        Ok(AdjointResiduals {
            q_evolution: q_dot - self.q_rhs(q, u)?,
            p_evolution: p_dot - self.p_rhs(q, u, p, lambda)?,
            constraint: self.base.phi(q, u)?,
            momentum_constraint: self.momentum_constraint(q, u, p, lambda)?,
        })
    }

    /// `H = ⟨p,f⟩ + ⟨λ,φ⟩ [+ L]`.
    pub fn hamiltonian(&self, q: &Vector, u: &Vector, p: &Vector, lambda: &Vector) -> Result<f64> {
        let mut h = p.dot(&self.base.f(q, u)?) + lambda.dot(&self.base.phi(q, u)?);
        if let Some(c) = &self.running_cost {
            h += c.value(q, u)?;
        }
        Ok(h)
    }

    /// `H_d = ⟨p,f⟩`.
    pub fn dynamical_hamiltonian(&self, q: &Vector, u: &Vector, p: &Vector) -> Result<f64> {
        Ok(p.dot(&self.base.f(q, u)?))
    }

    /// `(∂H/∂u, ∂H/∂λ)`; both vanish on the primary constraint set.
    pub fn algebraic_gradient(&self, q: &Vector, u: &Vector, p: &Vector, lambda: &Vector) -> Result<(Vector, Vector)> {
        Ok((self.momentum_constraint(q, u, p, lambda)?, self.base.phi(q, u)?))
    }
}

impl AdjointODESystem {
    pub fn p_rhs_ode(&self, q: &Vector, p: &Vector) -> Result<Vector> {
        self.p_rhs(q, &Vector::zeros(0), p, &Vector::zeros(0))
    }

    pub fn hamiltonian_ode(&self, q: &Vector, p: &Vector) -> Result<f64> {
        self.hamiltonian(q, &Vector::zeros(0), p, &Vector::zeros(0))
    }
}

/// Variational state `(δq, δu)` attached to a trajectory point.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentState {
    pub dq: Vector,
    pub du: Vector,
}

/// Linearisation of a DAE along a base point.
pub struct TangentSystem<'a, M: ?Sized> {
    pub base: &'a M,
}

pub fn tangent_system<M: DaeModel + ?Sized>(base: &M) -> TangentSystem<'_, M> {
    TangentSystem { base }
}

impl<M: DaeModel + ?Sized> TangentSystem<'_, M> {
    /// Residuals `(d(δq)/dt − Dqf δq − Duf δu, Dqφ δq + Duφ δu)`.
    pub fn residuals(&self, q: &Vector, u: &Vector, state: &TangentState, dq_dot: &Vector) -> Result<(Vector, Vector)> {
        let j = self.base.jacobians(q, u)?;
        Ok((
            dq_dot - (&j.dqf * &state.dq + &j.duf * &state.du),
            &j.dqphi * &state.dq + &j.duphi * &state.du,
        ))
    }

    /// Solves the linearised constraint for `δu` and returns the full tangent
    /// state and `d(δq)/dt`.
    pub fn complete(&self, q: &Vector, u: &Vector, dq: &Vector) -> Result<(TangentState, Vector)> {
        let j = self.base.jacobians(q, u)?;
        let du = if j.duphi.is_empty() {
            Vector::zeros(self.base.dim_u())
        } else {
            solve_dense(j.duphi.clone(), &-(&j.dqphi * dq), "linearised constraint Duphi")
                .map_err(|_| Error::Index("Duphi is singular; the DAE is not index 1 here".into()))?
        };
        let rate = &j.dqf * dq + &j.duf * &du;
        Ok((TangentState { dq: dq.clone(), du }, rate))
    }
}

/// Algebraic variable and reduced vector field at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct Reduction {
    pub u: Vector,
    /// `f'(q) = f(q, u(q))`.
    pub f: Vector,
    /// `Df'(q) = Dqf + Duf·Du`, `Du = −Duφ⁻¹ Dqφ`.
    pub df: Matrix,
    /// `Du = ∂u/∂q`.
    pub du_dq: Matrix,
    pub residual: f64,
}

fn require_index1(j: &Jacobians) -> Result<DenseLu> {
    DenseLu::new(j.duphi.clone()).ok_or_else(|| Error::Index("Duphi is singular; the DAE is not index 1 here".into()))
}

/// Solves `φ(q,u) = 0` for `u` by Newton from `u_guess` and assembles the
/// reduced field and its Jacobian.
pub fn reduce_index1<M: DaeModel + ?Sized>(dae: &M, q: &Vector, u_guess: &Vector, cfg: &NewtonConfig) -> Result<Reduction> {
    if dae.dim_phi() != dae.dim_u() {
        return Err(Error::Index(format!(
            "reduction needs dim(phi) = dim(u), got {} and {}",
            dae.dim_phi(),
            dae.dim_u()
        )));
    }
    if u_guess.len() != dae.dim_u() {
        return Err(Error::dim("u_guess", dae.dim_u(), u_guess.len()));
    }
    let u = if dae.dim_u() == 0 {
        Vector::zeros(0)
    } else {
        let res = newton_solve(|u| dae.phi(q, u), |u| Ok(dae.jacobians(q, u)?.duphi), u_guess, cfg).map_err(|e| match e {
            Error::Singular { .. } => Error::Index("Duphi is singular during reduction".into()),
            e => e,
        })?;
        if !res.converged {
            return Err(Error::Reduction { residual: res.residual_norm });
        }
        res.x
    };
    let j = dae.jacobians(q, &u)?;
    let residual = inf_norm(&dae.phi(q, &u)?);
    let du_dq = if dae.dim_u() == 0 {
        Matrix::zeros(0, dae.dim_q())
    } else {
        let lu = require_index1(&j)?;
        let mut d = Matrix::zeros(dae.dim_u(), dae.dim_q());
        for c in 0..dae.dim_q() {
            d.set_column(c, &-lu.solve(&j.dqphi.column(c).into_owned()));
        }
        d
    };
    let df = &j.dqf + &j.duf * &du_dq;
    Ok(Reduction {
        f: dae.f(q, &u)?,
        u,
        df,
        du_dq,
        residual,
    })
}

/// Solves the momentum constraint `0 = Dufᵀp + Duφᵀλ [+ ∇uL]` for `λ` directly.
pub fn solve_multiplier<M: DaeModel + ?Sized>(
    dae: &M,
    q: &Vector,
    u: &Vector,
    p: &Vector,
    running_cost: Option<&RunningCost>,
) -> Result<Vector> {
    if dae.dim_phi() != dae.dim_u() {
        return Err(Error::Index("multiplier solve needs dim(phi) = dim(u)".into()));
    }
    if dae.dim_u() == 0 {
        return Ok(Vector::zeros(0));
    }
    let j = dae.jacobians(q, u)?;
    let mut rhs = j.duf.tr_mul(p);
    if let Some(c) = running_cost {
        rhs += c.gradients(q, u)?.1;
    }
    let lu = DenseLu::new(j.duphi.transpose()).ok_or_else(|| Error::Index("Duphi is singular; cannot solve for the multiplier".into()))?;
    Ok(-lu.solve(&rhs))
}

/// Differentiates the Hessenberg constraint once: `φ = Dg·f`,
/// `Dqφ = Hg[f] + Dg·Dqf`, `Duφ = Dg·Duf`.
pub fn hessenberg_reduce(h: &HessenbergDAE) -> SemiExplicitDAE {
    let (f1, dg1) = (h.f.clone(), h.dg.clone());
    let (f2, dqf2, dg2, hg2) = (h.f.clone(), h.dqf.clone(), h.dg.clone(), h.hg_apply.clone());
    let (duf3, dg3) = (h.duf.clone(), h.dg.clone());
    SemiExplicitDAE {
        dim_q: h.dim_q,
        dim_u: h.dim_u,
        dim_phi: h.dim_u,
        f: h.f.clone(),
        phi: std::sync::Arc::new(move |q, u| dg1(q) * f1(q, u)),
        dqf: h.dqf.clone(),
        duf: h.duf.clone(),
        dqphi: std::sync::Arc::new(move |q, u| hg2(q, &f2(q, u)) + dg2(q) * dqf2(q, u)),
        duphi: std::sync::Arc::new(move |q, u| dg3(q) * duf3(q, u)),
    }
}

/// `⟨p, g(q)⟩`, conserved along the adjoint flow when `g` is a symmetry of `f`.
pub fn symmetry_momentum(g: &VectorField, q: &Vector, p: &Vector) -> Result<f64> {
    Ok(p.dot(&g.eval(q)?))
}

/// Index-1 DAE with `u` eliminated through the implicit function `u(q)`.
///
/// Each evaluation runs Newton on `φ(q,·) = 0` warm-started from the previous
/// solution, which keeps successive solves on the same branch. The cache makes
/// this type `!Sync`; clone it per worker.
#[derive(Debug, Clone)]
pub struct ReducedODE {
    pub dae: SemiExplicitDAE,
    pub cfg: NewtonConfig,
    warm: RefCell<Vector>,
}

impl ReducedODE {
    pub fn new(dae: SemiExplicitDAE, u_guess: Vector, cfg: NewtonConfig) -> Result<Self> {
        dae.require_square()?;
        if u_guess.len() != dae.dim_u {
            return Err(Error::dim("u_guess", dae.dim_u, u_guess.len()));
        }
        Ok(Self {
            dae,
            cfg,
            warm: RefCell::new(u_guess),
        })
    }

    pub fn last_u(&self) -> Vector {
        self.warm.borrow().clone()
    }

    pub fn reduce(&self, q: &Vector) -> Result<Reduction> {
        let guess = self.warm.borrow().clone();
        let r = reduce_index1(&self.dae, q, &guess, &self.cfg)?;
        *self.warm.borrow_mut() = r.u.clone();
        Ok(r)
    }

    pub fn as_vector_field_eval(&self, q: &Vector) -> Result<(Vector, Matrix)> {
        let r = self.reduce(q)?;
        Ok((r.f, r.df))
    }
}

impl DaeModel for ReducedODE {
    fn dim_q(&self) -> usize {
        self.dae.dim_q
    }
    fn dim_u(&self) -> usize {
        0
    }
    fn dim_phi(&self) -> usize {
        0
    }
    fn f(&self, q: &Vector, _u: &Vector) -> Result<Vector> {
        Ok(self.reduce(q)?.f)
    }
    fn phi(&self, _q: &Vector, _u: &Vector) -> Result<Vector> {
        Ok(Vector::zeros(0))
    }
    fn jacobians(&self, q: &Vector, _u: &Vector) -> Result<Jacobians> {
        let n = self.dae.dim_q;
        Ok(Jacobians {
            dqf: self.reduce(q)?.df,
            duf: Matrix::zeros(n, 0),
            dqphi: Matrix::zeros(0, n),
            duphi: Matrix::zeros(0, 0),
        })
    }
}
