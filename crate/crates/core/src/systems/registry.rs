//! Built-in analytic test problems.

use std::sync::Arc;

use nalgebra::{dmatrix, dvector};

use super::{HessenbergDAE, SemiExplicitDAE, VectorField};
use crate::ocp::OCProblem;
use crate::{adjoint, Error, Matrix, Result, Vector};

type FlowMap = Arc<dyn Fn(f64, &Vector) -> Vector + Send + Sync>;
type FlowJac = Arc<dyn Fn(f64, &Vector) -> Matrix + Send + Sync>;
type AlgebraicMap = Arc<dyn Fn(&Vector) -> Vector + Send + Sync>;

/// Closed-form flow of an autonomous problem, used as an oracle.
#[derive(Clone)]
pub struct ClosedForm {
    /// `q(τ)` starting from `q0`.
    pub flow: FlowMap,
    /// `dq/dτ` by its own analytic formula.
    pub flow_dot: FlowMap,
    /// `∂q(τ)/∂q0`.
    pub flow_jacobian: FlowJac,
    /// Algebraic variable on the constraint manifold, `u(q)`, for DAEs.
    pub algebraic: Option<AlgebraicMap>,
}

impl ClosedForm {
    /// Exact adjoint momentum at time `t` for terminal momentum `p_f` at `tf`,
    /// `p(t) = [∂q(tf)/∂q(t)]ᵀ p_f`.
    pub fn momentum(&self, t: f64, tf: f64, q0: &Vector, p_f: &Vector) -> Vector {
        let q_t = (self.flow)(t, q0);
        (self.flow_jacobian)(tf - t, &q_t).transpose() * p_f
    }
}

#[derive(Clone, Debug)]
pub enum Problem {
    Ode(VectorField),
    Dae(SemiExplicitDAE),
    Hessenberg(HessenbergDAE),
    Ocp(OCProblem),
}

#[derive(Clone)]
pub struct ProblemRecord {
    pub name: &'static str,
    pub description: &'static str,
    pub problem: Problem,
    pub q0: Vector,
    /// Starting guess for the algebraic variables at `q0`.
    pub u_guess: Vector,
    pub tf: f64,
    pub closed_form: Option<ClosedForm>,
}

impl std::fmt::Debug for ProblemRecord {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ProblemRecord")
            .field("name", &self.name)
            .field("problem", &self.problem)
            .finish()
    }
}

impl ProblemRecord {
    /// Index-1 view: ODEs gain empty algebraic blocks, Hessenberg problems are
    /// reduced by differentiating the constraint once.
    pub fn index1_dae(&self) -> Result<SemiExplicitDAE> {
        match &self.problem {
            Problem::Ode(vf) => Ok(SemiExplicitDAE::from_ode(vf)),
            Problem::Dae(d) => Ok(d.clone()),
            Problem::Hessenberg(h) => Ok(adjoint::hessenberg_reduce(h)),
            Problem::Ocp(_) => Err(Error::Input(format!(
                "'{}' is an optimal-control problem; it has no forward flow without a control law",
                self.name
            ))),
        }
    }

    pub fn is_ocp(&self) -> bool {
        matches!(self.problem, Problem::Ocp(_))
    }
}

const NAMES: [&str; 5] = ["linear-ode", "exp-dae", "nl-dae", "hess2", "lqr-ocp"];

pub fn builtin_names() -> Vec<&'static str> {
    NAMES.to_vec()
}

pub fn builtin(name: &str) -> Result<ProblemRecord> {
    match name {
        "linear-ode" => Ok(linear_ode()),
        "exp-dae" => Ok(exp_dae()),
        "nl-dae" => Ok(nl_dae()),
        "hess2" => Ok(hess2()),
        "lqr-ocp" => Ok(lqr_ocp()),
        _ => Err(Error::Lookup {
            kind: "problem",
            name: name.to_string(),
            available: NAMES.iter().map(|s| s.to_string()).collect(),
        }),
    }
}

fn rotation(tau: f64) -> Matrix {
    let (s, c) = tau.sin_cos();
    dmatrix![c, s; -s, c]
}

fn linear_ode() -> ProblemRecord {
    let a = dmatrix![0.0, 1.0; -1.0, 0.0];
    ProblemRecord {
        name: "linear-ode",
        description: "rotation q' = A q, A = [[0,1],[-1,0]]",
        problem: Problem::Ode(VectorField::linear(a.clone())),
        q0: dvector![1.0, 0.0],
        u_guess: Vector::zeros(0),
        tf: 1.0,
        closed_form: Some(ClosedForm {
            flow: Arc::new(|t, q0| rotation(t) * q0),
            flow_dot: Arc::new(move |t, q0| &a * (rotation(t) * q0)),
            flow_jacobian: Arc::new(|t, _| rotation(t)),
            algebraic: None,
        }),
    }
}

fn scalar_dae(
    f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
    phi: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
    dqf: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
    duf: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
    dqphi: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
    duphi: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
) -> SemiExplicitDAE {
    let v = |g: Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>| -> super::Map2 { Arc::new(move |q: &Vector, u: &Vector| dvector![g(q[0], u[0])]) };
    let m = |g: Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>| -> super::JacMap2 {
        Arc::new(move |q: &Vector, u: &Vector| Matrix::from_element(1, 1, g(q[0], u[0])))
    };
    SemiExplicitDAE {
        dim_q: 1,
        dim_u: 1,
        dim_phi: 1,
        f: v(Arc::new(f)),
        phi: v(Arc::new(phi)),
        dqf: m(Arc::new(dqf)),
        duf: m(Arc::new(duf)),
        dqphi: m(Arc::new(dqphi)),
        duphi: m(Arc::new(duphi)),
    }
}

fn exp_dae() -> ProblemRecord {
    ProblemRecord {
        name: "exp-dae",
        description: "q' = u, 0 = u - q (reduced flow q' = q)",
        problem: Problem::Dae(scalar_dae(|_, u| u, |q, u| u - q, |_, _| 0.0, |_, _| 1.0, |_, _| -1.0, |_, _| 1.0)),
        q0: dvector![1.0],
        u_guess: dvector![1.0],
        tf: 1.0,
        closed_form: Some(ClosedForm {
            flow: Arc::new(|t, q0| q0 * t.exp()),
            flow_dot: Arc::new(|t, q0| q0 * t.exp()),
            flow_jacobian: Arc::new(|t, _| Matrix::from_element(1, 1, t.exp())),
            algebraic: Some(Arc::new(|q| q.clone())),
        }),
    }
}

fn nl_dae() -> ProblemRecord {
    // Reduced flow q' = q² - q: q(τ) = q0 / (q0 + (1 - q0) e^τ).
    let den = |t: f64, q0: f64| q0 + (1.0 - q0) * t.exp();
    ProblemRecord {
        name: "nl-dae",
        description: "q' = -q + u, 0 = u - q^2 (reduced flow q' = q^2 - q)",
        problem: Problem::Dae(scalar_dae(
            |q, u| -q + u,
            |q, u| u - q * q,
            |_, _| -1.0,
            |_, _| 1.0,
            |q, _| -2.0 * q,
            |_, _| 1.0,
        )),
        q0: dvector![0.5],
        u_guess: dvector![0.25],
        tf: 1.0,
        closed_form: Some(ClosedForm {
            flow: Arc::new(move |t, q0| dvector![q0[0] / den(t, q0[0])]),
            flow_dot: Arc::new(move |t, q0| {
                let d = den(t, q0[0]);
                dvector![-q0[0] * (1.0 - q0[0]) * t.exp() / (d * d)]
            }),
            flow_jacobian: Arc::new(move |t, q0| {
                let d = den(t, q0[0]);
                Matrix::from_element(1, 1, t.exp() / (d * d))
            }),
            algebraic: Some(Arc::new(|q| dvector![q[0] * q[0]])),
        }),
    }
}

fn hess2() -> ProblemRecord {
    // f = (q₂ + u, -q₁), g = q₁. Reduced: u = -q₂, q' = (0, -q₁), so q₁ is
    // constant and q₂ decreases linearly.
    let h = HessenbergDAE {
        dim_q: 2,
        dim_u: 1,
        f: Arc::new(|q, u| dvector![q[1] + u[0], -q[0]]),
        dqf: Arc::new(|_, _| dmatrix![0.0, 1.0; -1.0, 0.0]),
        duf: Arc::new(|_, _| dmatrix![1.0; 0.0]),
        g: Arc::new(|q| dvector![q[0]]),
        dg: Arc::new(|_| dmatrix![1.0, 0.0]),
        hg_apply: Arc::new(|_, _| Matrix::zeros(1, 2)),
    };
    ProblemRecord {
        name: "hess2",
        description: "Hessenberg index 2: q' = (q2 + u, -q1), 0 = q1",
        problem: Problem::Hessenberg(h),
        q0: dvector![0.5, 1.0],
        u_guess: dvector![-1.0],
        tf: 1.0,
        closed_form: Some(ClosedForm {
            flow: Arc::new(|t, q0| dvector![q0[0], q0[1] - q0[0] * t]),
            flow_dot: Arc::new(|_, q0| dvector![0.0, -q0[0]]),
            flow_jacobian: Arc::new(|t, _| dmatrix![1.0, 0.0; -t, 1.0]),
            algebraic: Some(Arc::new(|q| dvector![-q[1]])),
        }),
    }
}

fn lqr_ocp() -> ProblemRecord {
    let ocp = OCProblem::lqr(dvector![1.0], 1.0);
    ProblemRecord {
        name: "lqr-ocp",
        description: "min ∫ ½(q² + u²) dt subject to q' = u",
        q0: ocp.q0.clone(),
        u_guess: dvector![0.0],
        tf: ocp.tf,
        problem: Problem::Ocp(ocp),
        closed_form: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::{check_jacobians_fd, DaeModel};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn registry_lookup() {
        let exp = builtin("exp-dae").unwrap().index1_dae().unwrap();
        assert_eq!((exp.dim_q, exp.dim_u, exp.dim_phi), (1, 1, 1));
        match builtin("hess2").unwrap().problem {
            Problem::Hessenberg(h) => assert_eq!((h.dim_q, h.dim_u), (2, 1)),
            _ => panic!("hess2 should be a Hessenberg record"),
        }
        let err = builtin("bogus").unwrap_err();
        assert!(err.to_string().contains("nl-dae"), "{err}");
        assert!(builtin("lqr-ocp").unwrap().index1_dae().is_err());
    }

    #[test]
    fn analytic_jacobians_match_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for name in ["linear-ode", "exp-dae", "nl-dae", "hess2"] {
            let dae = builtin(name).unwrap().index1_dae().unwrap();
            for _ in 0..100 {
                let q = Vector::from_fn(dae.dim_q(), |_, _| rng.random_range(-1.0..1.0));
                let u = Vector::from_fn(dae.dim_u(), |_, _| rng.random_range(-1.0..1.0));
                let c = check_jacobians_fd(&dae, &q, &u, 1e-6).unwrap();
                assert!(c.max() <= 1e-5, "{name}: {c:?}");
            }
        }
    }

    #[test]
    fn closed_forms_satisfy_their_equations() {
        for name in ["linear-ode", "exp-dae", "nl-dae", "hess2"] {
            let rec = builtin(name).unwrap();
            let dae = rec.index1_dae().unwrap();
            let cf = rec.closed_form.clone().unwrap();
            for k in 0..=20 {
                let t = 0.1 * k as f64;
                let q = (cf.flow)(t, &rec.q0);
                let u = cf.algebraic.as_ref().map(|a| a(&q)).unwrap_or_else(|| Vector::zeros(0));
                let f = dae.f(&q, &u).unwrap();
                let phi = dae.phi(&q, &u).unwrap();
                assert!((&(cf.flow_dot)(t, &rec.q0) - f).amax() <= 1e-10, "{name} t={t}");
                assert!(phi.iter().all(|x| x.abs() <= 1e-10), "{name} t={t}");
            }
        }
    }

    #[test]
    fn flow_jacobian_matches_differences() {
        for name in ["linear-ode", "exp-dae", "nl-dae", "hess2"] {
            let rec = builtin(name).unwrap();
            let cf = rec.closed_form.clone().unwrap();
            let t = 0.7;
            let jac = (cf.flow_jacobian)(t, &rec.q0);
            for j in 0..rec.q0.len() {
                let mut qp = rec.q0.clone();
                let mut qm = rec.q0.clone();
                qp[j] += 1e-6;
                qm[j] -= 1e-6;
                let col = ((cf.flow)(t, &qp) - (cf.flow)(t, &qm)) / 2e-6;
                assert!((col - jac.column(j)).amax() < 1e-8, "{name}");
            }
        }
    }
}
