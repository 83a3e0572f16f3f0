use log::warn;

use super::{StageSet, TangentStages};
use crate::adjoint::AdjointSystem;
use crate::solver::{inf_norm, newton_solve, DenseLu, NewtonConfig};
use crate::systems::{DaeModel, Jacobians, RunningCost, SemiExplicitDAE, VectorField};
use crate::tableau::{AdjointTableau, Tableau};
use crate::{Error, Matrix, Result, Vector};

pub(crate) fn split(x: &Vector, s: usize, nd: usize, na: usize) -> (Vec<Vector>, Vec<Vector>) {
    let v = (0..s).map(|i| x.rows(i * nd, nd).into_owned()).collect();
    let u = (0..s).map(|i| x.rows(s * nd + i * na, na).into_owned()).collect();
    (v, u)
}

pub(crate) fn stage_positions(t: &Tableau, q0: &Vector, h: f64, v: &[Vector]) -> Vec<Vector> {
    let s = t.stages();
    (0..s)
        .map(|i| {
            let mut q = q0.clone();
            for (j, vj) in v.iter().enumerate() {
                q.axpy(h * t.a[(i, j)], vj, 1.0);
            }
            q
        })
        .collect()
}

/// `q₀ + h Σ bᵢ Vⁱ`, or the last stage for stiffly accurate tableaus.
pub(crate) fn endpoint(t: &Tableau, q0: &Vector, h: f64, q_stages: &[Vector], v: &[Vector]) -> Result<Vector> {
    let mut q1 = q0.clone();
    for (i, vi) in v.iter().enumerate() {
        q1.axpy(h * t.b[i], vi, 1.0);
    }
    if t.is_stiffly_accurate() {
        let last = q_stages.last().expect("at least one stage");
        let gap = (last - &q1).amax();
        if gap > 1e-13 {
            return Err(Error::Input(format!(
                "last stage and b-weighted update disagree by {gap:e} for stiffly accurate '{}'",
                t.name
            )));
        }
        return Ok(last.clone());
    }
    Ok(q1)
}

/// Jacobian of the velocity-form stage residual with respect to `(V, U)`.
///
/// Also the matrix of the tangent stage equations at a solved step.
pub fn stage_matrix(t: &Tableau, h: f64, jac: &[Jacobians]) -> Matrix {
    let s = t.stages();
    let nd = jac[0].dqf.nrows();
    let na = jac[0].duf.ncols();
    let m = jac[0].dqphi.nrows();
    let (rows, cols) = (s * (nd + m), s * (nd + na));
    let mut mat = Matrix::zeros(rows, cols);
    for i in 0..s {
        let ji = &jac[i];
        for j in 0..s {
            let aij = t.a[(i, j)];
            // r_V^i = V^i − f(Q^i, U^i)
            let mut blk = &ji.dqf * (-h * aij);
            if i == j {
                for d in 0..nd {
                    blk[(d, d)] += 1.0;
                }
            }
            mat.view_mut((i * nd, j * nd), (nd, nd)).copy_from(&blk);
            // r_φ^i = φ(Q^i, U^i)
            mat.view_mut((s * nd + i * m, j * nd), (m, nd)).copy_from(&(&ji.dqphi * (h * aij)));
        }
        mat.view_mut((i * nd, s * nd + i * na), (nd, na)).copy_from(&(-&ji.duf));
        mat.view_mut((s * nd + i * m, s * nd + i * na), (m, na)).copy_from(&ji.duphi);
    }
    mat
}

/// One implicit Runge–Kutta step of `q̇ = f(q,u)`, `0 = φ(q,u)`.
///
/// Stage velocities and algebraic stages are solved jointly by Newton.
pub fn rk_step<M: DaeModel + ?Sized>(
    model: &M,
    t: &Tableau,
    q0: &Vector,
    u_guess: &Vector,
    h: f64,
    cfg: &NewtonConfig,
) -> Result<(Vector, StageSet)> {
    let (s, nd, na, m) = (t.stages(), model.dim_q(), model.dim_u(), model.dim_phi());
    if q0.len() != nd {
        return Err(Error::dim("q0", nd, q0.len()));
    }
    if u_guess.len() != na {
        return Err(Error::dim("u_guess", na, u_guess.len()));
    }
    if m != na {
        return Err(Error::Index(format!("stage solve needs dim(phi) = dim(u), got {m} and {na}")));
    }
    if !(h > 0.0) {
        return Err(Error::Input(format!("step size must be > 0, got {h}")));
    }

    let v0 = model.f(q0, u_guess)?;
    let mut x0 = Vector::zeros(s * (nd + na));
    for i in 0..s {
        x0.rows_mut(i * nd, nd).copy_from(&v0);
        x0.rows_mut(s * nd + i * na, na).copy_from(u_guess);
    }

    let residual = |x: &Vector| -> Result<Vector> {
        let (v, u) = split(x, s, nd, na);
        let qs = stage_positions(t, q0, h, &v);
        let mut r = Vector::zeros(s * (nd + m));
        for i in 0..s {
            r.rows_mut(i * nd, nd).copy_from(&(&v[i] - model.f(&qs[i], &u[i])?));
            r.rows_mut(s * nd + i * m, m).copy_from(&model.phi(&qs[i], &u[i])?);
        }
        Ok(r)
    };
    let jacobian = |x: &Vector| -> Result<Matrix> {
        let (v, u) = split(x, s, nd, na);
        let qs = stage_positions(t, q0, h, &v);
        let jac = (0..s).map(|i| model.jacobians(&qs[i], &u[i])).collect::<Result<Vec<_>>>()?;
        Ok(stage_matrix(t, h, &jac))
    };

    let sol = newton_solve(residual, jacobian, &x0, cfg)?;
    if !sol.converged {
        return Err(Error::NoConvergence {
            context: format!("stage equations ({})", t.name),
            residual: sol.residual_norm,
            iterations: sol.iterations,
        });
    }
    let (v, u) = split(&sol.x, s, nd, na);
    let q = stage_positions(t, q0, h, &v);
    let jac = (0..s).map(|i| model.jacobians(&q[i], &u[i])).collect::<Result<Vec<_>>>()?;
    let mut constraint_residual = 0.0_f64;
    for i in 0..s {
        constraint_residual = constraint_residual.max(inf_norm(&model.phi(&q[i], &u[i])?));
    }
    let q1 = endpoint(t, q0, h, &q, &v)?;
    Ok((
        q1,
        StageSet {
            q,
            u,
            v,
            p: Vec::new(),
            lambda: Vec::new(),
            jac,
            constraint_residual,
        },
    ))
}

pub fn rk_step_ode(vf: &VectorField, t: &Tableau, q0: &Vector, h: f64, cfg: &NewtonConfig) -> Result<(Vector, StageSet)> {
    rk_step(vf, t, q0, &Vector::zeros(0), h, cfg)
}

pub fn rk_step_dae(
    dae: &SemiExplicitDAE,
    t: &Tableau,
    q0: &Vector,
    h: f64,
    u_guess: &Vector,
    cfg: &NewtonConfig,
) -> Result<(Vector, StageSet)> {
    if dae.dim_u > 0 && !t.is_stiffly_accurate() {
        warn!("tableau '{}' has c_s != 1; the step endpoint need not satisfy the constraint", t.name);
    }
    rk_step(dae, t, q0, u_guess, h, cfg)
}

/// Linearised step: solves for `(δVⁱ, δUⁱ)` with the stage matrix of the
/// solved base step and returns `δq₁`.
pub fn tangent_step(t: &Tableau, stages: &StageSet, h: f64, dq0: &Vector) -> Result<(Vector, TangentStages)> {
    let s = t.stages();
    let nd = dq0.len();
    let na = stages.u[0].len();
    let m = stages.jac[0].dqphi.nrows();
    let mat = stage_matrix(t, h, &stages.jac);
    let mut rhs = Vector::zeros(s * (nd + m));
    for i in 0..s {
        rhs.rows_mut(i * nd, nd).copy_from(&(&stages.jac[i].dqf * dq0));
        rhs.rows_mut(s * nd + i * m, m).copy_from(&-(&stages.jac[i].dqphi * dq0));
    }
    let lu = DenseLu::new(mat).ok_or_else(|| Error::Singular {
        context: "tangent stage system".into(),
        iterate: 0,
    })?;
    let x = lu.solve(&rhs);
    let (dv, du) = split(&x, s, nd, na);
    let dq = stage_positions(t, dq0, h, &dv);
    let dq1 = endpoint(t, dq0, h, &dq, &dv)?;
    Ok((dq1, TangentStages { dq, du, dv }))
}

/// Result of a momentum step: the momentum at the other end of the step plus
/// the stage momenta and multipliers.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentumStep {
    pub p: Vector,
    pub stages_p: Vec<Vector>,
    pub stages_lambda: Vec<Vector>,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Orientation {
    /// Given `p₁`, solve for `p₀`.
    TypeII,
    /// Given `p₀`, solve for `p₁`.
    Forward,
}

fn momentum_step(
    t: &Tableau,
    at: &AdjointTableau,
    stages: &StageSet,
    h: f64,
    cost: Option<&RunningCost>,
    p_known: &Vector,
    orientation: Orientation,
) -> Result<MomentumStep> {
    let s = t.stages();
    let jac = &stages.jac;
    let nd = jac[0].dqf.nrows();
    let na = jac[0].duf.ncols();
    let m = jac[0].dqphi.nrows();
    if m != na {
        return Err(Error::Index(format!("momentum solve needs dim(phi) = dim(u), got {m} and {na}")));
    }
    if p_known.len() != nd {
        return Err(Error::dim("momentum", nd, p_known.len()));
    }
    let grads = match cost {
        Some(c) => (0..s).map(|i| c.gradients(&stages.q[i], &stages.u[i])).collect::<Result<Vec<_>>>()?,
        None => vec![(Vector::zeros(nd), Vector::zeros(na)); s],
    };

    // Unknowns: [P¹..Pˢ | Λ¹..Λˢ | p_free].
    let (off_l, off_p) = (s * nd, s * (nd + m));
    let n = off_p + nd;
    let mut mat = Matrix::zeros(n, n);
    let mut rhs = Vector::zeros(n);
    let eye = Matrix::identity(nd, nd);

    for i in 0..s {
        let row = i * nd;
        // Pⁱ − p₀ + h Σⱼ ãᵢⱼ (Dqfⱼᵀ Pʲ + Dqφⱼᵀ Λʲ) = −h Σⱼ ãᵢⱼ ∇qLⱼ
        let mut r = Vector::zeros(nd);
        for j in 0..s {
            let c = h * at.a_tilde[(i, j)];
            let mut blk = jac[j].dqf.transpose() * c;
            if i == j {
                blk += &eye;
            }
            mat.view_mut((row, j * nd), (nd, nd)).copy_from(&blk);
            mat.view_mut((row, off_l + j * m), (nd, m)).copy_from(&(jac[j].dqphi.transpose() * c));
            r.axpy(-c, &grads[j].0, 1.0);
        }
        match orientation {
            Orientation::TypeII => mat.view_mut((row, off_p), (nd, nd)).copy_from(&(-&eye)),
            Orientation::Forward => r += p_known,
        }
        rhs.rows_mut(row, nd).copy_from(&r);

        // Dufᵢᵀ Pⁱ + Duφᵢᵀ Λⁱ = −∇uLᵢ
        let row = off_l + i * na;
        mat.view_mut((row, i * nd), (na, nd)).copy_from(&jac[i].duf.transpose());
        mat.view_mut((row, off_l + i * m), (na, m)).copy_from(&jac[i].duphi.transpose());
        rhs.rows_mut(row, na).copy_from(&-&grads[i].1);
    }

    // p₁ − p₀ + h Σᵢ bᵢ (Dqfᵢᵀ Pⁱ + Dqφᵢᵀ Λⁱ) = −h Σᵢ bᵢ ∇qLᵢ
    let mut r = Vector::zeros(nd);
    for i in 0..s {
        let c = h * t.b[i];
        mat.view_mut((off_p, i * nd), (nd, nd)).copy_from(&(jac[i].dqf.transpose() * c));
        mat.view_mut((off_p, off_l + i * m), (nd, m)).copy_from(&(jac[i].dqphi.transpose() * c));
        r.axpy(-c, &grads[i].0, 1.0);
    }
    match orientation {
        Orientation::TypeII => {
            mat.view_mut((off_p, off_p), (nd, nd)).copy_from(&(-&eye));
            r -= p_known;
        }
        Orientation::Forward => {
            mat.view_mut((off_p, off_p), (nd, nd)).copy_from(&eye);
            r += p_known;
        }
    }
    rhs.rows_mut(off_p, nd).copy_from(&r);

    let lu = DenseLu::new(mat).ok_or_else(|| Error::Singular {
        context: "momentum stage system".into(),
        iterate: 0,
    })?;
    let x = lu.solve(&rhs);
    Ok(MomentumStep {
        p: x.rows(off_p, nd).into_owned(),
        stages_p: (0..s).map(|i| x.rows(i * nd, nd).into_owned()).collect(),
        stages_lambda: (0..s).map(|i| x.rows(off_l + i * m, m).into_owned()).collect(),
    })
}

/// Type II momentum step `(q₀, p₁) ↦ p₀` on solved base stages.
pub fn adjoint_step_type2<M>(
    adj: &AdjointSystem<M>,
    t: &Tableau,
    at: &AdjointTableau,
    stages: &StageSet,
    h: f64,
    p1: &Vector,
) -> Result<MomentumStep> {
    momentum_step(t, at, stages, h, adj.running_cost.as_ref(), p1, Orientation::TypeII)
}

/// Forward momentum step `(q₀, p₀) ↦ p₁` on solved base stages.
pub fn adjoint_step_forward<M>(
    adj: &AdjointSystem<M>,
    t: &Tableau,
    at: &AdjointTableau,
    stages: &StageSet,
    h: f64,
    p0: &Vector,
) -> Result<MomentumStep> {
    momentum_step(t, at, stages, h, adj.running_cost.as_ref(), p0, Orientation::Forward)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adjoint::{lift_dae, lift_ode};
    use crate::systems::builtin;
    use crate::tableau::{builtin_tableau, symplectic_adjoint};
    use approx::assert_abs_diff_eq;
    use nalgebra::{dmatrix, dvector};

    fn dae(name: &str) -> SemiExplicitDAE {
        builtin(name).unwrap().index1_dae().unwrap()
    }

    const MID_FACTOR: f64 = (1.0 + 0.05) / (1.0 - 0.05);

    #[test]
    fn midpoint_on_exponential() {
        let cfg = NewtonConfig::default();
        let t = builtin_tableau("midpoint").unwrap();
        let (q1, st) = rk_step_ode(&VectorField::linear(dmatrix![1.0]), &t, &dvector![1.0], 0.1, &cfg).unwrap();
        assert_abs_diff_eq!(st.q[0][0], 1.0 / 0.95, epsilon = 1e-14);
        assert_abs_diff_eq!(q1[0], MID_FACTOR, epsilon = 1e-14);

        let (q1, _) = rk_step_ode(&VectorField::zero(2), &t, &dvector![0.3, -0.2], 0.1, &cfg).unwrap();
        assert_eq!(q1, dvector![0.3, -0.2]);

        let rot = VectorField::linear(dmatrix![0.0, 1.0; -1.0, 0.0]);
        let (q1, _) = rk_step_ode(&rot, &builtin_tableau("gauss2").unwrap(), &dvector![1.0, 0.0], 0.1, &cfg).unwrap();
        assert!(q1.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn dae_step_examples() {
        let cfg = NewtonConfig::default();
        let mid = builtin_tableau("midpoint").unwrap();
        let (q1, st) = rk_step_dae(&dae("exp-dae"), &mid, &dvector![1.0], 0.1, &dvector![1.0], &cfg).unwrap();
        assert_abs_diff_eq!(q1[0], MID_FACTOR, epsilon = 1e-14);
        assert!(st.constraint_residual <= 1e-12);

        let radau = builtin_tableau("radauIIA2").unwrap();
        let nl = dae("nl-dae");
        let (q1, st) = rk_step_dae(&nl, &radau, &dvector![0.5], 0.05, &dvector![0.25], &cfg).unwrap();
        assert!(nl.phi(&q1, st.u.last().unwrap()).unwrap().amax() <= 1e-12);

        let (q1, _) = rk_step_dae(&nl, &radau, &dvector![0.0], 0.05, &dvector![0.0], &cfg).unwrap();
        assert_eq!(q1[0], 0.0);
    }

    #[test]
    fn dae_step_rejects_bad_input() {
        let cfg = NewtonConfig::default();
        let mid = builtin_tableau("midpoint").unwrap();
        assert!(rk_step_dae(&dae("nl-dae"), &mid, &dvector![0.5], 0.0, &dvector![0.25], &cfg).is_err());
        assert!(matches!(
            rk_step_dae(&dae("nl-dae"), &mid, &dvector![0.5, 1.0], 0.1, &dvector![0.25], &cfg),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn tangent_step_examples() {
        let cfg = NewtonConfig::default();
        let mid = builtin_tableau("midpoint").unwrap();
        let (_, st) = rk_step_dae(&dae("exp-dae"), &mid, &dvector![1.0], 0.1, &dvector![1.0], &cfg).unwrap();
        let (dq1, _) = tangent_step(&mid, &st, 0.1, &dvector![1.0]).unwrap();
        assert_abs_diff_eq!(dq1[0], MID_FACTOR, epsilon = 1e-14);
        let (dq1, ts) = tangent_step(&mid, &st, 0.1, &dvector![0.0]).unwrap();
        assert_eq!(dq1[0], 0.0);
        assert!(ts.dq.iter().chain(&ts.du).chain(&ts.dv).all(|v| v.amax() == 0.0));

        let radau = builtin_tableau("radauIIA2").unwrap();
        let (_, st) = rk_step_dae(&dae("nl-dae"), &radau, &dvector![0.5], 0.05, &dvector![0.25], &cfg).unwrap();
        let (_, ts) = tangent_step(&radau, &st, 0.05, &dvector![1.0]).unwrap();
        for i in 0..2 {
            assert_abs_diff_eq!(ts.du[i][0], 2.0 * st.q[i][0] * ts.dq[i][0], epsilon = 1e-14);
        }
    }

    #[test]
    fn momentum_step_examples() {
        let cfg = NewtonConfig::default();
        let mid = builtin_tableau("midpoint").unwrap();
        let at = symplectic_adjoint(&mid).unwrap();
        let exp = dae("exp-dae");
        let (_, st) = rk_step_dae(&exp, &mid, &dvector![1.0], 0.1, &dvector![1.0], &cfg).unwrap();
        let adj = lift_dae(exp.clone(), None);

        let back = adjoint_step_type2(&adj, &mid, &at, &st, 0.1, &dvector![1.0]).unwrap();
        assert_abs_diff_eq!(back.p[0], MID_FACTOR, epsilon = 1e-14);

        let zero = adjoint_step_type2(&adj, &mid, &at, &st, 0.1, &dvector![0.0]).unwrap();
        assert_eq!(zero.p[0], 0.0);
        assert!(zero.stages_p.iter().chain(&zero.stages_lambda).all(|v| v.amax() == 0.0));

        let fwd = adjoint_step_forward(&adj, &mid, &at, &st, 0.1, &back.p).unwrap();
        assert_abs_diff_eq!(fwd.p[0], 1.0, epsilon = 1e-12);
        let fwd = adjoint_step_forward(&adj, &mid, &at, &st, 0.1, &dvector![1.1052632]).unwrap();
        assert_abs_diff_eq!(fwd.p[0], 1.0, epsilon = 1e-6);

        let zf = VectorField::zero(2);
        let (_, st0) = rk_step_ode(&zf, &mid, &dvector![0.2, 0.1], 0.1, &cfg).unwrap();
        let fwd = adjoint_step_forward(&lift_ode(zf, None), &mid, &at, &st0, 0.1, &dvector![0.7, -1.0]).unwrap();
        assert_eq!(fwd.p, dvector![0.7, -1.0]);
    }

    #[test]
    fn augmented_step_matches_discrete_identity() {
        // With p₁ = 0 the augmented identity gives ⟨p₀, e_k⟩ = h Σ bᵢ ⟨∇L(Qⁱ), δQⁱ⟩
        // for the tangent run started at e_k.
        let cfg = NewtonConfig::default();
        let h = 0.1;
        for name in ["midpoint", "gauss2", "radauIIA2"] {
            let t = builtin_tableau(name).unwrap();
            let at = symplectic_adjoint(&t).unwrap();
            let exp = dae("exp-dae");
            let (_, st) = rk_step_dae(&exp, &t, &dvector![1.0], h, &dvector![1.0], &cfg).unwrap();
            let cost = RunningCost::half_q_squared();
            let adj = lift_dae(exp, Some(cost.clone()));
            let p0 = adjoint_step_type2(&adj, &t, &at, &st, h, &dvector![0.0]).unwrap().p;
            let (_, ts) = tangent_step(&t, &st, h, &dvector![1.0]).unwrap();
            let mut quad = 0.0;
            for i in 0..t.stages() {
                let (gq, gu) = cost.gradients(&st.q[i], &st.u[i]).unwrap();
                quad += h * t.b[i] * (gq.dot(&ts.dq[i]) + gu.dot(&ts.du[i]));
            }
            assert_abs_diff_eq!(p0[0], quad, epsilon = 1e-14);
        }
    }

    #[test]
    fn type2_and_forward_are_inverse() {
        let cfg = NewtonConfig::default();
        for name in ["midpoint", "gauss2", "gauss3", "radauIIA2", "radauIIA3"] {
            let t = builtin_tableau(name).unwrap();
            let at = symplectic_adjoint(&t).unwrap();
            let nl = dae("nl-dae");
            let (_, st) = rk_step_dae(&nl, &t, &dvector![0.5], 0.1, &dvector![0.25], &cfg).unwrap();
            for cost in [None, Some(RunningCost::half_squares())] {
                let adj = lift_dae(nl.clone(), cost);
                let back = adjoint_step_type2(&adj, &t, &at, &st, 0.1, &dvector![0.8]).unwrap();
                let fwd = adjoint_step_forward(&adj, &t, &at, &st, 0.1, &back.p).unwrap();
                assert!((fwd.p[0] - 0.8).abs() <= 1e-12, "{name}");
            }
        }
    }
}
