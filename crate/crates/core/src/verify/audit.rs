use crate::adjoint::{symmetry_momentum, AdjointSystem};
use crate::integrate::Trajectory;
use crate::solver::inf_norm;
use crate::systems::{DaeModel, VectorField};
use crate::tableau::Tableau;
use crate::{Error, Result};

/// Audited quantities at one node.
#[derive(Debug, Clone, PartialEq)]
pub struct AuditRow {
    pub step: usize,
    pub t: f64,
    /// `⟨p_k, δq_k⟩`.
    pub pairing: f64,
    /// `⟨p_k,δq_k⟩ − ⟨p_0,δq_0⟩`, plus the accumulated `h Σ bᵢ ⟨dL, (δQⁱ,δUⁱ)⟩`
    /// over earlier steps when the adjoint is augmented.
    pub pairing_defect: f64,
    /// Largest `‖φ‖∞` at the node and the stages of the step ending there.
    pub constraint_residual_max: f64,
    /// Largest momentum-constraint residual at the node and those stages.
    pub momentum_constraint_residual_max: f64,
    pub symmetry_momentum: Option<f64>,
    pub hamiltonian: f64,
    pub dynamical_hamiltonian: f64,
}

#[derive(Debug, Clone)]
pub struct Audit {
    pub rows: Vec<AuditRow>,
    pub max_defect: f64,
    pub max_symmetry_drift: Option<f64>,
}

fn same_stages(a: &Trajectory, b: &Trajectory) -> bool {
    a.steps() == b.steps()
        && a.h == b.h
        && a.stages.iter().zip(&b.stages).all(|(x, y)| x.q == y.q && x.u == y.u)
}

/// Audits the adjoint-variational pairing along a tangent trajectory and an
/// adjoint trajectory produced from the same forward sweep.
///
/// The running cost (if any) is taken from `adj`; `symmetry` adds the column
/// `⟨p, g(q)⟩`.
pub fn audit_invariants<M: DaeModel>(
    tangent: &Trajectory,
    adjoint: &Trajectory,
    adj: &AdjointSystem<M>,
    t: &Tableau,
    symmetry: Option<&VectorField>,
) -> Result<Audit> {
    if !tangent.has_tangent() {
        return Err(Error::Audit("first trajectory carries no tangent data".into()));
    }
    if !adjoint.has_momenta() {
        return Err(Error::Audit("second trajectory carries no momenta".into()));
    }
    if !same_stages(tangent, adjoint) {
        return Err(Error::Audit("trajectories do not share their forward stages".into()));
    }
    if adjoint.augmented != adj.is_augmented() {
        return Err(Error::Audit("adjoint trajectory and system disagree about the running cost".into()));
    }
    let cost = adj.running_cost.as_ref();
    let model = &adj.base;
    let mut rows = Vec::with_capacity(adjoint.states.len());
    let mut quad = 0.0;
    let mut pairing0 = 0.0;
    let mut sym0 = None;
    let mut max_defect = 0.0_f64;
    let mut max_drift: Option<f64> = None;

    for k in 0..adjoint.states.len() {
        let (node, var) = (&adjoint.states[k], &tangent.states[k]);
        let p = node.p.as_ref().unwrap();
        let lambda = node.lambda.as_ref().unwrap();
        let pairing = p.dot(var.dq.as_ref().unwrap());

        let mut c_res = inf_norm(&model.phi(&node.q, &node.u)?);
        let mut m_res = inf_norm(&adj.momentum_constraint(&node.q, &node.u, p, lambda)?);
        if k > 0 {
            let (st, ts) = (&adjoint.stages[k - 1], &tangent.tangent_stages[k - 1]);
            c_res = c_res.max(st.constraint_residual);
            for i in 0..t.stages() {
                let j = &st.jac[i];
                let mut r = j.duf.tr_mul(&st.p[i]) + j.duphi.tr_mul(&st.lambda[i]);
                if let Some(c) = cost {
                    let (gq, gu) = c.gradients(&st.q[i], &st.u[i])?;
                    r += &gu;
                    quad += adjoint.h * t.b[i] * (gq.dot(&ts.dq[i]) + gu.dot(&ts.du[i]));
                }
                m_res = m_res.max(inf_norm(&r));
            }
        } else {
            pairing0 = pairing;
        }
        let defect = pairing - pairing0 + quad;
        max_defect = max_defect.max(defect.abs());

        let sym = match symmetry {
            Some(g) => {
                let v = symmetry_momentum(g, &node.q, p)?;
                let base = *sym0.get_or_insert(v);
                max_drift = Some(max_drift.unwrap_or(0.0).max((v - base).abs()));
                Some(v)
            }
            None => None,
        };
        rows.push(AuditRow {
            step: k,
            t: adjoint.times[k],
            pairing,
            pairing_defect: defect,
            constraint_residual_max: c_res,
            momentum_constraint_residual_max: m_res,
            symmetry_momentum: sym,
            hamiltonian: adj.hamiltonian(&node.q, &node.u, p, lambda)?,
            dynamical_hamiltonian: adj.dynamical_hamiltonian(&node.q, &node.u, p)?,
        });
    }
    Ok(Audit {
        rows,
        max_defect,
        max_symmetry_drift: max_drift,
    })
}
