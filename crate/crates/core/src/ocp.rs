//! Optimal control of index-1 DAEs by single shooting on the extremality system.
//!
//! For `min ∫ L(q,y,u) dt + C(q(t_f))` subject to `q̇ = f(q,y,u)`, `0 = φ(q,y)`
//! and an optional terminal constraint `φ_f(q(t_f)) = 0`, the first-order
//! conditions with interior controls are the augmented adjoint DAE over the
//! combined algebraic variable `w = (y,u)`:
//!
//! ```text
//! q̇ = f,   ṗ = −Dqfᵀp − Dqφᵀλ − ∇qL,   0 = φ,   0 = Dwfᵀp + Dwφᵀλ + ∇wL
//! q(0) = q₀,   p(t_f) = ∇C + Dφ_fᵀ λ_f,   0 = φ_f(q(t_f))
//! ```
//!
//! The control stationarity rows make the algebraic block non-square
//! (`dim φ < dim w`), so the forward map solves stages, momenta and multipliers
//! jointly. Stage Jacobians are built by central differences.

use std::fmt;

use crate::adjoint::{lift_dae, AdjointDAESystem};
use crate::integrate::{AdjointDAEState, StageSet, Trajectory};
use crate::par::{self, Execution};
use crate::solver::{fd_jacobian, inf_norm, newton_solve, NewtonConfig};
use crate::systems::{DaeModel, JacMap, Map, RunningCost, SemiExplicitDAE, TerminalCost};
use crate::tableau::{symplectic_adjoint, AdjointTableau, Tableau};
use crate::integrate::{endpoint_of, positions_of};
use crate::{Error, Matrix, Result, Vector};

const FD_STEP: f64 = 1e-6;

/// Terminal equality constraint `φ_f(q) = 0`.
#[derive(Clone)]
pub struct TerminalConstraint {
    pub dim: usize,
    pub value: Map,
    pub jacobian: JacMap,
}

impl fmt::Debug for TerminalConstraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TerminalConstraint").field("dim", &self.dim).finish()
    }
}

/// Optimal-control problem. The DAE's algebraic variable is `w = (y, u)` with
/// the `dim_y` constrained components first; `dae.dim_phi` must equal `dim_y`.
#[derive(Clone, Debug)]
pub struct OCProblem {
    pub dae: SemiExplicitDAE,
    pub dim_y: usize,
    pub running_cost: RunningCost,
    pub terminal_cost: Option<TerminalCost>,
    pub terminal_constraint: Option<TerminalConstraint>,
    pub q0: Vector,
    pub tf: f64,
}

impl OCProblem {
    pub fn new(
        dae: SemiExplicitDAE,
        dim_y: usize,
        running_cost: RunningCost,
        terminal_cost: Option<TerminalCost>,
        terminal_constraint: Option<TerminalConstraint>,
        q0: Vector,
        tf: f64,
    ) -> Result<Self> {
        if dae.dim_phi != dim_y || dim_y > dae.dim_u {
            return Err(Error::Input(format!(
                "constraint count {} must equal dim_y = {} and not exceed dim(w) = {}",
                dae.dim_phi, dim_y, dae.dim_u
            )));
        }
        if q0.len() != dae.dim_q {
            return Err(Error::dim("ocp q0", dae.dim_q, q0.len()));
        }
        if !(tf >= 0.0) || !tf.is_finite() {
            return Err(Error::Input(format!("horizon must be finite and >= 0, got {tf}")));
        }
        Ok(Self {
            dae,
            dim_y,
            running_cost,
            terminal_cost,
            terminal_constraint,
            q0,
            tf,
        })
    }

    /// `q̇ = u`, `L = ½(‖q‖² + ‖u‖²)`, free terminal state.
    pub fn lqr(q0: Vector, tf: f64) -> Self {
        let n = q0.len();
        let dae = SemiExplicitDAE {
            dim_q: n,
            dim_u: n,
            dim_phi: 0,
            f: std::sync::Arc::new(|_, u| u.clone()),
            phi: std::sync::Arc::new(|_, _| Vector::zeros(0)),
            dqf: std::sync::Arc::new(move |_, _| Matrix::zeros(n, n)),
            duf: std::sync::Arc::new(move |_, _| Matrix::identity(n, n)),
            dqphi: std::sync::Arc::new(move |_, _| Matrix::zeros(0, n)),
            duphi: std::sync::Arc::new(move |_, _| Matrix::zeros(0, n)),
        };
        Self {
            dae,
            dim_y: 0,
            running_cost: RunningCost::half_squares(),
            terminal_cost: None,
            terminal_constraint: None,
            q0,
            tf,
        }
    }

    pub fn dim_control(&self) -> usize {
        self.dae.dim_u - self.dim_y
    }

    pub fn dim_terminal(&self) -> usize {
        self.terminal_constraint.as_ref().map_or(0, |c| c.dim)
    }
}

/// Analytic extremal of the scalar LQR problem with free terminal state:
/// `q = q₀ cosh(t_f−t)/cosh(t_f)`, `p = q₀ sinh(t_f−t)/cosh(t_f)`.
pub fn lqr_extremal(q0: f64, tf: f64, t: f64) -> (f64, f64) {
    let c = tf.cosh();
    (q0 * (tf - t).cosh() / c, q0 * (tf - t).sinh() / c)
}

/// Boundary conditions of the extremality system.
#[derive(Clone, Debug)]
pub struct BoundaryData {
    pub q0: Vector,
    pub terminal_cost: Option<TerminalCost>,
    pub terminal_constraint: Option<TerminalConstraint>,
}

impl BoundaryData {
    /// `∇C(q_f) + Dφ_f(q_f)ᵀ λ_f`, zero without terminal data.
    pub fn transversality(&self, qf: &Vector, lambda_f: &Vector) -> Result<Vector> {
        let mut p = match &self.terminal_cost {
            Some(c) => c.gradient(qf)?,
            None => Vector::zeros(qf.len()),
        };
        if let Some(tc) = &self.terminal_constraint {
            if lambda_f.len() != tc.dim {
                return Err(Error::dim("terminal multiplier", tc.dim, lambda_f.len()));
            }
            p += (tc.jacobian)(qf).tr_mul(lambda_f);
        }
        Ok(p)
    }

    /// Stacked `[p_f − transversality; φ_f(q_f)]`.
    pub fn terminal_residual(&self, qf: &Vector, pf: &Vector, lambda_f: &Vector) -> Result<Vector> {
        let r = pf - self.transversality(qf, lambda_f)?;
        match &self.terminal_constraint {
            Some(tc) => {
                let g = (tc.value)(qf);
                Ok(Vector::from_iterator(r.len() + g.len(), r.iter().chain(g.iter()).copied()))
            }
            None => Ok(r),
        }
    }
}

/// Augmented adjoint DAE plus boundary data.
#[derive(Clone, Debug)]
pub struct ExtremalitySystem {
    pub adjoint: AdjointDAESystem,
    pub boundary: BoundaryData,
    pub dim_y: usize,
}

pub fn assemble_extremality(ocp: &OCProblem) -> ExtremalitySystem {
    ExtremalitySystem {
        adjoint: lift_dae(ocp.dae.clone(), Some(ocp.running_cost.clone())),
        boundary: BoundaryData {
            q0: ocp.q0.clone(),
            terminal_cost: ocp.terminal_cost.clone(),
            terminal_constraint: ocp.terminal_constraint.clone(),
        },
        dim_y: ocp.dim_y,
    }
}

impl ExtremalitySystem {
    fn dae(&self) -> &SemiExplicitDAE {
        &self.adjoint.base
    }

    fn cost(&self) -> &RunningCost {
        self.adjoint.running_cost.as_ref().expect("extremality system is augmented")
    }

    /// `Dqfᵀp + Dqφᵀλ + ∇qL` and `Dwfᵀp + Dwφᵀλ + ∇wL` at one point.
    fn gradients(&self, q: &Vector, w: &Vector, p: &Vector, lambda: &Vector) -> Result<(Vector, Vector)> {
        let j = self.dae().jacobians(q, w)?;
        let (gq, gw) = self.cost().gradients(q, w)?;
        Ok((
            j.dqf.tr_mul(p) + j.dqphi.tr_mul(lambda) + gq,
            j.duf.tr_mul(p) + j.duphi.tr_mul(lambda) + gw,
        ))
    }

    /// Solves `φ(q,w) = 0` and `Dwfᵀp + Dwφᵀλ + ∇wL = 0` for `(w, λ)`.
    pub fn solve_algebraic(&self, q: &Vector, p: &Vector, w_guess: &Vector, lambda_guess: &Vector, cfg: &NewtonConfig) -> Result<(Vector, Vector)> {
        let (na, m) = (self.dae().dim_u, self.dae().dim_phi);
        let mut x0 = Vector::zeros(na + m);
        x0.rows_mut(0, na).copy_from(w_guess);
        x0.rows_mut(na, m).copy_from(lambda_guess);
        let residual = |x: &Vector| -> Result<Vector> {
            let w = x.rows(0, na).into_owned();
            let lam = x.rows(na, m).into_owned();
            let mut r = Vector::zeros(na + m);
            r.rows_mut(0, m).copy_from(&self.dae().phi(q, &w)?);
            r.rows_mut(m, na).copy_from(&self.gradients(q, &w, p, &lam)?.1);
            Ok(r)
        };
        let sol = newton_solve(residual, |x| fd_jacobian(residual, x, FD_STEP), &x0, cfg)
            .map_err(|e| match e {
                Error::Singular { .. } => Error::Index("control Hessian or Dyphi is singular".into()),
                e => e,
            })?;
        if !sol.converged {
            return Err(Error::NoConvergence {
                context: "node stationarity".into(),
                residual: sol.residual_norm,
                iterations: sol.iterations,
            });
        }
        Ok((sol.x.rows(0, na).into_owned(), sol.x.rows(na, m).into_owned()))
    }

    /// One forward presymplectic step `(q₀, p₀) ↦ (q₁, p₁)`.
    ///
    /// Unknowns are the stage velocities `V`, algebraic stages `W`, momentum
    /// stages `P` and multiplier stages `Λ`.
    pub fn step(
        &self,
        t: &Tableau,
        at: &AdjointTableau,
        q0: &Vector,
        p0: &Vector,
        w0: &Vector,
        lambda0: &Vector,
        h: f64,
        cfg: &NewtonConfig,
    ) -> Result<(Vector, Vector, StageSet)> {
        let s = t.stages();
        let dae = self.dae();
        let (nd, na, m) = (dae.dim_q, dae.dim_u, dae.dim_phi);
        let (ow, op, ol) = (s * nd, s * (nd + na), s * (2 * nd + na));
        let n = s * (2 * nd + na + m);
        let unpack = |x: &Vector| {
            let v: Vec<Vector> = (0..s).map(|i| x.rows(i * nd, nd).into_owned()).collect();
            let w: Vec<Vector> = (0..s).map(|i| x.rows(ow + i * na, na).into_owned()).collect();
            let p: Vec<Vector> = (0..s).map(|i| x.rows(op + i * nd, nd).into_owned()).collect();
            let l: Vec<Vector> = (0..s).map(|i| x.rows(ol + i * m, m).into_owned()).collect();
            (v, w, p, l)
        };
        let residual = |x: &Vector| -> Result<Vector> {
            let (v, w, p, l) = unpack(x);
            let qs = positions_of(t, q0, h, &v);
            let mut r = Vector::zeros(n);
            let mut g = Vec::with_capacity(s);
            for i in 0..s {
                let (gq, gw) = self.gradients(&qs[i], &w[i], &p[i], &l[i])?;
                r.rows_mut(i * nd, nd).copy_from(&(&v[i] - dae.f(&qs[i], &w[i])?));
                r.rows_mut(ow + i * m, m).copy_from(&dae.phi(&qs[i], &w[i])?);
                r.rows_mut(ow + s * m + i * na, na).copy_from(&gw);
                g.push(gq);
            }
            let base = ow + s * (m + na);
            for i in 0..s {
                let mut ri = &p[i] - p0;
                for (j, gj) in g.iter().enumerate() {
                    ri.axpy(h * at.a_tilde[(i, j)], gj, 1.0);
                }
                r.rows_mut(base + i * nd, nd).copy_from(&ri);
            }
            Ok(r)
        };

        let v0 = dae.f(q0, w0)?;
        let mut x0 = Vector::zeros(n);
        for i in 0..s {
            x0.rows_mut(i * nd, nd).copy_from(&v0);
            x0.rows_mut(ow + i * na, na).copy_from(w0);
            x0.rows_mut(op + i * nd, nd).copy_from(p0);
            x0.rows_mut(ol + i * m, m).copy_from(lambda0);
        }
        let sol = newton_solve(residual, |x| fd_jacobian(residual, x, FD_STEP), &x0, cfg)?;
        if !sol.converged {
            return Err(Error::NoConvergence {
                context: format!("extremal stage equations ({})", t.name),
                residual: sol.residual_norm,
                iterations: sol.iterations,
            });
        }
        let (v, w, p, l) = unpack(&sol.x);
        let q = positions_of(t, q0, h, &v);
        let mut p1 = p0.clone();
        let mut jac = Vec::with_capacity(s);
        let mut constraint_residual = 0.0_f64;
        for i in 0..s {
            let (gq, _) = self.gradients(&q[i], &w[i], &p[i], &l[i])?;
            p1.axpy(-h * t.b[i], &gq, 1.0);
            jac.push(dae.jacobians(&q[i], &w[i])?);
            constraint_residual = constraint_residual.max(inf_norm(&dae.phi(&q[i], &w[i])?));
        }
        let q1 = endpoint_of(t, q0, h, &q, &v)?;
        Ok((
            q1,
            p1,
            StageSet {
                q,
                u: w,
                v,
                p,
                lambda: l,
                jac,
                constraint_residual,
            },
        ))
    }

    /// Forward presymplectic integration from `(q₀, p₀)`.
    pub fn integrate(&self, t: &Tableau, p0: &Vector, w_guess: &Vector, h: f64, n: usize, cfg: &NewtonConfig) -> Result<Trajectory> {
        let at = symplectic_adjoint(t)?;
        let dae = self.dae();
        let q0 = &self.boundary.q0;
        if p0.len() != dae.dim_q {
            return Err(Error::dim("p0", dae.dim_q, p0.len()));
        }
        let (w, lam) = self.solve_algebraic(q0, p0, w_guess, &Vector::zeros(dae.dim_phi), cfg)?;
        let mut states = vec![AdjointDAEState {
            q: q0.clone(),
            u: w,
            p: Some(p0.clone()),
            lambda: Some(lam),
            dq: None,
            du: None,
        }];
        let mut stages = Vec::with_capacity(n);
        for k in 0..n {
            let prev = &states[k];
            let (p_prev, l_prev) = (prev.p.as_ref().unwrap(), prev.lambda.as_ref().unwrap());
            let (q1, p1, st) = self
                .step(t, &at, &prev.q, p_prev, &prev.u, l_prev, h, cfg)
                .map_err(|e| e.at_step(k))?;
            let (w1, l1) = self
                .solve_algebraic(&q1, &p1, st.u.last().unwrap(), st.lambda.last().unwrap(), cfg)
                .map_err(|e| e.at_step(k))?;
            states.push(AdjointDAEState {
                q: q1,
                u: w1,
                p: Some(p1),
                lambda: Some(l1),
                dq: None,
                du: None,
            });
            stages.push(st);
        }
        Ok(Trajectory {
            tableau: t.name.clone(),
            h,
            times: (0..=n).map(|k| k as f64 * h).collect(),
            states,
            stages,
            tangent_stages: Vec::new(),
            augmented: true,
            backward_sweeps: 0,
        })
    }

    /// `h Σₖ Σᵢ bᵢ L(Qⁱ,Wⁱ) + C(q_N)` on a stored trajectory.
    pub fn discrete_cost(&self, t: &Tableau, traj: &Trajectory) -> Result<f64> {
        let mut j = 0.0;
        for st in &traj.stages {
            for i in 0..t.stages() {
                j += traj.h * t.b[i] * self.cost().value(&st.q[i], &st.u[i])?;
            }
        }
        if let Some(c) = &self.boundary.terminal_cost {
            j += c.value(&traj.final_state().q)?;
        }
        Ok(j)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ShootingConfig {
    /// Threshold on the infinity norm of the terminal residual.
    pub tol: f64,
    pub max_iter: usize,
    /// Relative step for the finite-difference shooting Jacobian.
    pub fd_step: f64,
    /// Stage and node solves.
    pub newton: NewtonConfig,
    pub exec: Execution,
}

impl Default for ShootingConfig {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_iter: 30,
            fd_step: 1e-6,
            newton: NewtonConfig::default(),
            exec: Execution::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExtremalTrajectory {
    pub trajectory: Trajectory,
    pub p0: Vector,
    pub lambda_f: Option<Vector>,
    pub shooting_residual: f64,
    pub iterations: usize,
    /// Terminal residual norm after each shooting iterate.
    pub history: Vec<f64>,
    pub cost: f64,
}

/// Single shooting on `(p₀, λ_f) ↦ terminal residual`, one forward
/// presymplectic integration per evaluation.
pub fn shoot_extremal(ocp: &OCProblem, t: &Tableau, n: usize, p0_guess: &Vector, cfg: &ShootingConfig) -> Result<ExtremalTrajectory> {
    cfg.newton.validate()?;
    let sys = assemble_extremality(ocp);
    let nd = ocp.dae.dim_q;
    let nf = ocp.dim_terminal();
    if p0_guess.len() != nd {
        return Err(Error::dim("p0 guess", nd, p0_guess.len()));
    }
    let h = if n == 0 { 0.0 } else { ocp.tf / n as f64 };
    if n > 0 && !(h > 0.0) {
        return Err(Error::Input(format!("horizon {} gives no positive step", ocp.tf)));
    }
    let w_guess = Vector::zeros(ocp.dae.dim_u);

    let run = |z: &Vector| -> Result<(Trajectory, Vector)> {
        let p0 = z.rows(0, nd).into_owned();
        let lf = z.rows(nd, nf).into_owned();
        let traj = sys.integrate(t, &p0, &w_guess, h, n, &cfg.newton)?;
        let last = traj.final_state();
        let r = sys.boundary.terminal_residual(&last.q, last.p.as_ref().unwrap(), &lf)?;
        Ok((traj, r))
    };
    let residual = |z: &Vector| run(z).map(|(_, r)| r);
    let jacobian = |z: &Vector| -> Result<Matrix> {
        let cols = par::map_range(cfg.exec, z.len(), |j| {
            let e = cfg.fd_step * z[j].abs().max(1.0);
            let mut zp = z.clone();
            zp[j] += e;
            let mut zm = z.clone();
            zm[j] -= e;
            Ok::<_, Error>((residual(&zp)? - residual(&zm)?) / (2.0 * e))
        });
        let mut m = Matrix::zeros(z.len(), z.len());
        for (j, c) in cols.into_iter().enumerate() {
            m.set_column(j, &c?);
        }
        Ok(m)
    };

    let mut z0 = Vector::zeros(nd + nf);
    z0.rows_mut(0, nd).copy_from(p0_guess);
    let shoot_cfg = NewtonConfig {
        tol: cfg.tol,
        max_iter: cfg.max_iter,
        ..cfg.newton
    };
    let sol = newton_solve(residual, jacobian, &z0, &shoot_cfg).map_err(|e| match e {
        Error::Singular { iterate, .. } => Error::Singular {
            context: "shooting Jacobian".into(),
            iterate,
        },
        e => e,
    })?;
    if !sol.converged {
        return Err(Error::Shooting { history: sol.history });
    }
    let (trajectory, r) = run(&sol.x)?;
    let cost = sys.discrete_cost(t, &trajectory)?;
    Ok(ExtremalTrajectory {
        trajectory,
        p0: sol.x.rows(0, nd).into_owned(),
        lambda_f: (nf > 0).then(|| sol.x.rows(nd, nf).into_owned()),
        shooting_residual: inf_norm(&r),
        iterations: sol.iterations,
        history: sol.history,
        cost,
    })
}

/// Infinity norm of the gradient of the discrete action at a stored extremal.
///
/// Momenta at the nodes are rebuilt backward from the transversality value,
/// `p_n = p_{n+1} + h Σᵢ bᵢ Gⁱ` with `G = Dqfᵀ P + Dqφᵀ Λ + ∇qL`, and node
/// positions forward from `q₀` through the stored velocities. Each component
/// is divided by its quadrature weight `h·bₖ`, so the `Vᵏ` block reads
/// `Pᵏ − p_{n+1} − h Σᵢ (bᵢ aᵢₖ / bₖ) Gⁱ` and the `Wᵏ` block is the stationarity
/// `∇wL + Dwfᵀ Pᵏ + Dwφᵀ Λᵏ`. The stage equations `V − f` and `φ` (the
/// multiplier gradients) are included as they stand.
pub fn discrete_extremality_residual(ocp: &OCProblem, t: &Tableau, ext: &ExtremalTrajectory) -> Result<f64> {
    let traj = &ext.trajectory;
    let n = traj.steps();
    if n == 0 {
        return Ok(0.0);
    }
    let sys = assemble_extremality(ocp);
    let dae = sys.dae();
    let (s, h) = (t.stages(), traj.h);

    let mut q_nodes = vec![ocp.q0.clone()];
    let mut stage_q = Vec::with_capacity(n);
    for st in &traj.stages {
        let qn = q_nodes.last().unwrap().clone();
        let qs = positions_of(t, &qn, h, &st.v);
        let mut q1 = qn;
        for i in 0..s {
            q1.axpy(h * t.b[i], &st.v[i], 1.0);
        }
        stage_q.push(qs);
        q_nodes.push(q1);
    }

    let nf = ocp.dim_terminal();
    let lf = ext.lambda_f.clone().unwrap_or_else(|| Vector::zeros(nf));
    let mut p_next = sys.boundary.transversality(&q_nodes[n], &lf)?;
    let mut worst = 0.0_f64;
    for k in (0..n).rev() {
        let st = &traj.stages[k];
        let mut g = Vec::with_capacity(s);
        for i in 0..s {
            let q = &stage_q[k][i];
            let (gq, gw) = sys.gradients(q, &st.u[i], &st.p[i], &st.lambda[i])?;
            worst = worst
                .max(inf_norm(&gw))
                .max(inf_norm(&(&st.v[i] - dae.f(q, &st.u[i])?)))
                .max(inf_norm(&dae.phi(q, &st.u[i])?));
            g.push(gq);
        }
        for kk in 0..s {
            let mut r = &st.p[kk] - &p_next;
            for (i, gi) in g.iter().enumerate() {
                r.axpy(-h * t.b[i] * t.a[(i, kk)] / t.b[kk], gi, 1.0);
            }
            worst = worst.max(inf_norm(&r));
        }
        for (i, gi) in g.iter().enumerate() {
            p_next.axpy(h * t.b[i], gi, 1.0);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tableau::builtin_tableau;
    use approx::assert_abs_diff_eq;
    use nalgebra::dvector;
    use std::sync::Arc;

    fn radau() -> Tableau {
        builtin_tableau("radauIIA2").unwrap()
    }

    #[test]
    fn stationarity_gives_feedback_law() {
        let sys = assemble_extremality(&OCProblem::lqr(dvector![1.0], 1.0));
        let (w, lam) = sys
            .solve_algebraic(&dvector![0.3], &dvector![0.7], &dvector![0.0], &Vector::zeros(0), &NewtonConfig::default())
            .unwrap();
        assert_abs_diff_eq!(w[0], -0.7, epsilon = 1e-12);
        assert!(lam.is_empty());
        // ṗ = −∂H/∂q = −q on the extremal
        let rhs = sys.adjoint.p_rhs(&dvector![0.3], &w, &dvector![0.7], &lam).unwrap();
        assert_abs_diff_eq!(rhs[0], -0.3, epsilon = 1e-15);
    }

    #[test]
    fn free_terminal_state_gives_zero_momentum() {
        let sys = assemble_extremality(&OCProblem::lqr(dvector![1.0], 1.0));
        assert_eq!(sys.boundary.transversality(&dvector![0.4], &Vector::zeros(0)).unwrap(), dvector![0.0]);
    }

    #[test]
    fn lqr_shooting_matches_tanh() {
        let ocp = OCProblem::lqr(dvector![1.0], 1.0);
        let t = radau();
        let ext = shoot_extremal(&ocp, &t, 200, &dvector![0.0], &ShootingConfig::default()).unwrap();
        assert!((ext.p0[0] - 1f64.tanh()).abs() <= 1e-6, "{}", ext.p0[0]);
        assert!(ext.shooting_residual <= 1e-9);
        assert!(discrete_extremality_residual(&ocp, &t, &ext).unwrap() <= 1e-9);
        assert!((ext.cost - 0.5 * 1f64.tanh()).abs() <= 1e-6);
    }

    #[test]
    fn zero_state_and_short_horizon() {
        let t = radau();
        let ext = shoot_extremal(&OCProblem::lqr(dvector![0.0], 1.0), &t, 20, &dvector![0.3], &ShootingConfig::default()).unwrap();
        assert!(ext.p0[0].abs() <= ShootingConfig::default().tol, "{:?}", ext.history);

        let ext = shoot_extremal(&OCProblem::lqr(dvector![1.0], 0.01), &t, 10, &dvector![0.0], &ShootingConfig::default()).unwrap();
        assert!((ext.p0[0] - 0.01).abs() <= 0.05 * 0.01);
    }

    #[test]
    fn perturbed_control_is_detected() {
        let ocp = OCProblem::lqr(dvector![1.0], 1.0);
        let t = radau();
        let mut ext = shoot_extremal(&ocp, &t, 50, &dvector![0.0], &ShootingConfig::default()).unwrap();
        ext.trajectory.stages[10].u[0][0] += 1e-3;
        assert!(discrete_extremality_residual(&ocp, &t, &ext).unwrap() >= 1e-5);
    }

    #[test]
    fn zero_horizon_residual_is_zero() {
        let ocp = OCProblem::lqr(dvector![1.0], 0.0);
        let t = radau();
        let ext = shoot_extremal(&ocp, &t, 0, &dvector![0.0], &ShootingConfig::default()).unwrap();
        assert_eq!(discrete_extremality_residual(&ocp, &t, &ext).unwrap(), 0.0);
    }

    #[test]
    fn terminal_constraint_multiplier() {
        // q(t_f) = 0 gives q = q₀ sinh(t_f−t)/sinh(t_f), p(0) = q₀ coth(t_f).
        let mut ocp = OCProblem::lqr(dvector![1.0], 1.0);
        ocp.terminal_constraint = Some(TerminalConstraint {
            dim: 1,
            value: Arc::new(|q| q.clone()),
            jacobian: Arc::new(|_| Matrix::identity(1, 1)),
        });
        let t = radau();
        let ext = shoot_extremal(&ocp, &t, 100, &dvector![0.0], &ShootingConfig::default()).unwrap();
        assert!((ext.p0[0] - 1.0 / 1f64.tanh()).abs() <= 1e-6);
        let lf = ext.lambda_f.as_ref().unwrap()[0];
        assert_abs_diff_eq!(lf, ext.trajectory.final_state().p.as_ref().unwrap()[0], epsilon = 1e-9);
        assert!(discrete_extremality_residual(&ocp, &t, &ext).unwrap() <= 1e-9);
    }

    #[test]
    fn analytic_extremal_satisfies_flow() {
        let (tf, t) = (1.3, 0.4);
        let (q, p) = lqr_extremal(2.0, tf, t);
        let e = 1e-6;
        let (qp, pp) = lqr_extremal(2.0, tf, t + e);
        let (qm, pm) = lqr_extremal(2.0, tf, t - e);
        assert_abs_diff_eq!((qp - qm) / (2.0 * e), -p, epsilon = 1e-8);
        assert_abs_diff_eq!((pp - pm) / (2.0 * e), -q, epsilon = 1e-8);
    }
}
