use crate::adjoint::{reduce_index1, solve_multiplier, AdjointDAESystem};
use crate::solver::{fd_jacobian, inf_norm, DenseLu, NewtonConfig};
use crate::systems::DaeModel;
use crate::{Error, Result, Vector};

/// Forward-difference step along the Hamiltonian vector field.
pub const PCA_FD_STEP: f64 = 1e-6;
/// Largest accepted directional derivative of the constraints.
pub const PCA_TANGENCY_TOL: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct PcaReport {
    /// `Some(1)` when the field solving the primary constraints is tangent to
    /// them; `None` when a secondary constraint appears.
    pub nu_p: Option<u32>,
    /// `‖φ(q,u)‖∞` and the momentum-constraint residual after the solves.
    pub residuals: Vec<f64>,
    /// Forward-difference rate of change of both constraints along the field.
    pub tangency: f64,
    pub u: Vector,
    pub lambda: Vector,
}

/// One pass of the constraint algorithm at `(q, p)`.
///
/// Solves the primary constraints `φ = 0` and `Dufᵀp + Duφᵀλ [+ ∇uL] = 0` for
/// `(u, λ)`, fixes `(u̇, λ̇)` by differentiating both constraints along
/// `(q̇, ṗ)`, and measures by forward difference whether the resulting field
/// stays on the constraint set.
pub fn pca_check(adj: &AdjointDAESystem, q: &Vector, p: &Vector, u_guess: &Vector, cfg: &NewtonConfig) -> Result<PcaReport> {
    let dae = &adj.base;
    if dae.dim_u == 0 && dae.dim_phi > 0 {
        return Err(Error::Index("constraints without algebraic variables: Duphi has no columns".into()));
    }
    let cost = adj.running_cost.as_ref();
    let (na, m) = (dae.dim_u, dae.dim_phi);
    let u = reduce_index1(dae, q, u_guess, cfg)?.u;
    let lambda = solve_multiplier(dae, q, &u, p, cost)?;
    let residuals = vec![
        inf_norm(&dae.phi(q, &u)?),
        inf_norm(&adj.momentum_constraint(q, &u, p, &lambda)?),
    ];

    let q_dot = adj.q_rhs(q, &u)?;
    let p_dot = adj.p_rhs(q, &u, p, &lambda)?;
    let j = dae.jacobians(q, &u)?;

    // Momentum constraint as a function of (q, u) at fixed (p, λ).
    let psi = |z: &Vector| -> Result<Vector> {
        let (zq, zu) = (z.rows(0, q.len()).into_owned(), z.rows(q.len(), na).into_owned());
        adj.momentum_constraint(&zq, &zu, p, &lambda)
    };
    let mut qu = Vector::zeros(q.len() + na);
    qu.rows_mut(0, q.len()).copy_from(q);
    qu.rows_mut(q.len(), na).copy_from(&u);
    let d_psi = fd_jacobian(psi, &qu, 1e-7)?;
    let (psi_q, psi_u) = (d_psi.columns(0, q.len()).into_owned(), d_psi.columns(q.len(), na).into_owned());

    // Dqφ q̇ + Duφ u̇ = 0,   ψ_q q̇ + ψ_u u̇ + Dufᵀ ṗ + Duφᵀ λ̇ = 0
    let mut mat = crate::Matrix::zeros(m + na, na + m);
    mat.view_mut((0, 0), (m, na)).copy_from(&j.duphi);
    mat.view_mut((m, 0), (na, na)).copy_from(&psi_u);
    mat.view_mut((m, na), (na, m)).copy_from(&j.duphi.transpose());
    let mut rhs = Vector::zeros(m + na);
    rhs.rows_mut(0, m).copy_from(&-(&j.dqphi * &q_dot));
    rhs.rows_mut(m, na).copy_from(&-(&psi_q * &q_dot + j.duf.tr_mul(&p_dot)));
    let rates = if m + na == 0 {
        Vector::zeros(0)
    } else {
        DenseLu::new(mat)
            .ok_or_else(|| Error::Index("cannot solve for the algebraic velocities; Duphi is singular".into()))?
            .solve(&rhs)
    };
    let (u_dot, lambda_dot) = (rates.rows(0, na).into_owned(), rates.rows(na, m).into_owned());

    let e = PCA_FD_STEP;
    let (q2, u2) = (q + &q_dot * e, &u + &u_dot * e);
    let (p2, l2) = (p + &p_dot * e, &lambda + &lambda_dot * e);
    let phi_rate = (dae.phi(&q2, &u2)? - dae.phi(q, &u)?) / e;
    let psi_rate = (adj.momentum_constraint(&q2, &u2, &p2, &l2)? - adj.momentum_constraint(q, &u, p, &lambda)?) / e;
    let tangency = inf_norm(&phi_rate).max(inf_norm(&psi_rate));
    Ok(PcaReport {
        nu_p: (tangency <= PCA_TANGENCY_TOL).then_some(1),
        residuals,
        tangency,
        u,
        lambda,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adjoint::lift_dae;
    use crate::systems::{builtin, RunningCost, SemiExplicitDAE};
    use crate::Matrix;
    use nalgebra::dvector;
    use std::sync::Arc;

    fn adj(name: &str, cost: Option<RunningCost>) -> AdjointDAESystem {
        lift_dae(builtin(name).unwrap().index1_dae().unwrap(), cost)
    }

    #[test]
    fn exp_dae_terminates_in_one_step() {
        let r = pca_check(&adj("exp-dae", None), &dvector![1.0], &dvector![3.0], &dvector![0.0], &NewtonConfig::default()).unwrap();
        assert_eq!(r.nu_p, Some(1));
        assert!(r.residuals.iter().all(|x| *x <= 1e-10));
        assert!((r.lambda[0] + 3.0).abs() <= 1e-12);
    }

    #[test]
    fn nl_dae_terminates_in_one_step() {
        for cost in [None, Some(RunningCost::half_squares())] {
            let r = pca_check(&adj("nl-dae", cost), &dvector![2.0], &dvector![1.0], &dvector![1.0], &NewtonConfig::default()).unwrap();
            assert_eq!(r.nu_p, Some(1));
            assert!(r.residuals.iter().all(|x| *x <= 1e-10));
            assert!(r.tangency <= PCA_TANGENCY_TOL);
        }
    }

    #[test]
    fn constraint_without_algebraic_variable_is_an_index_error() {
        let dae = SemiExplicitDAE {
            dim_q: 1,
            dim_u: 0,
            dim_phi: 1,
            f: Arc::new(|q, _| q.clone()),
            phi: Arc::new(|q, _| q.clone()),
            dqf: Arc::new(|_, _| Matrix::identity(1, 1)),
            duf: Arc::new(|_, _| Matrix::zeros(1, 0)),
            dqphi: Arc::new(|_, _| Matrix::identity(1, 1)),
            duphi: Arc::new(|_, _| Matrix::zeros(1, 0)),
        };
        let err = pca_check(&lift_dae(dae, None), &dvector![1.0], &dvector![1.0], &Vector::zeros(0), &NewtonConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Index(_)));
    }

    #[test]
    fn singular_duphi_is_an_index_error() {
        // φ = q − u² has Duφ = 0 at u = 0.
        let dae = SemiExplicitDAE {
            dim_q: 1,
            dim_u: 1,
            dim_phi: 1,
            f: Arc::new(|_, u| u.clone()),
            phi: Arc::new(|q, u| dvector![q[0] - u[0] * u[0]]),
            dqf: Arc::new(|_, _| Matrix::zeros(1, 1)),
            duf: Arc::new(|_, _| Matrix::identity(1, 1)),
            dqphi: Arc::new(|_, _| Matrix::identity(1, 1)),
            duphi: Arc::new(|_, u| Matrix::from_element(1, 1, -2.0 * u[0])),
        };
        let err = pca_check(&lift_dae(dae, None), &dvector![0.0], &dvector![1.0], &dvector![0.0], &NewtonConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Index(_)), "{err:?}");
    }
}
