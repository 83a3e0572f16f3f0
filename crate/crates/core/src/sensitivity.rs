//! Initial-condition sensitivities of terminal and running costs.
//!
//! The adjoint route runs one forward sweep and one backward sweep and reads
//! the gradient off `p₀`. The tangent route needs one forward-plus-tangent run
//! per direction, and the finite-difference route two perturbed forward runs
//! per direction. All three use the same tableau and step count, so adjoint
//! and tangent agree to solver precision on the discrete problem.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::adjoint::AdjointSystem;
use crate::integrate::{adjoint_sweep, forward_sweep, tangent_sweep, Trajectory};
use crate::par::{self, Execution};
use crate::solver::NewtonConfig;
use crate::systems::{ProblemRecord, RunningCost, SemiExplicitDAE, TerminalCost};
use crate::tableau::Tableau;
use crate::{Error, Result, Vector};

#[derive(Debug, Clone)]
pub enum Cost {
    Terminal(TerminalCost),
    Running(RunningCost),
}

/// Problem, discretisation and solver settings shared by all routes.
#[derive(Debug, Clone)]
pub struct Setup {
    pub dae: SemiExplicitDAE,
    pub q0: Vector,
    pub u_guess: Vector,
    pub tf: f64,
    pub steps: usize,
    pub tableau: Tableau,
    pub newton: NewtonConfig,
}

impl Setup {
    pub fn from_record(rec: &ProblemRecord, tableau: Tableau, steps: usize, newton: NewtonConfig) -> Result<Self> {
        Ok(Self {
            dae: rec.index1_dae()?,
            q0: rec.q0.clone(),
            u_guess: rec.u_guess.clone(),
            tf: rec.tf,
            steps,
            tableau,
            newton,
        })
    }

    pub fn h(&self) -> f64 {
        if self.steps == 0 {
            0.0
        } else {
            self.tf / self.steps as f64
        }
    }

    fn check(&self) -> Result<()> {
        if !(self.tf >= 0.0) || !self.tf.is_finite() {
            return Err(Error::Input(format!("tf must be finite and >= 0, got {}", self.tf)));
        }
        if self.steps > 0 && !(self.h() > 0.0) {
            return Err(Error::Input("positive step count needs tf > 0".into()));
        }
        Ok(())
    }

    pub fn forward(&self, q0: &Vector) -> Result<Trajectory> {
        self.check()?;
        // h is only used to scale the stage equations, so any positive value works when N = 0.
        let h = if self.steps == 0 { 1.0 } else { self.h() };
        forward_sweep(&self.dae, &self.tableau, q0, &self.u_guess, h, self.steps, &self.newton)
    }
}

/// Discrete cost of a forward trajectory: `C(q_N)` or `h Σₖ Σᵢ bᵢ L(Qⁱ,Uⁱ)`.
pub fn trajectory_cost(t: &Tableau, traj: &Trajectory, cost: &Cost) -> Result<f64> {
    match cost {
        Cost::Terminal(c) => c.value(&traj.final_state().q),
        Cost::Running(l) => {
            let mut j = 0.0;
            for st in &traj.stages {
                for i in 0..t.stages() {
                    j += traj.h * t.b[i] * l.value(&st.q[i], &st.u[i])?;
                }
            }
            Ok(j)
        }
    }
}

/// Independent checks to run alongside the adjoint sweep.
#[derive(Debug, Clone)]
pub struct Oracles {
    /// Directions for the tangent and FD legs; empty means the unit basis.
    pub directions: Vec<Vector>,
    pub tangent: bool,
    /// Central-difference step; `None` skips the FD leg.
    pub fd_eps: Option<f64>,
    pub exec: Execution,
}

impl Default for Oracles {
    fn default() -> Self {
        Self {
            directions: Vec::new(),
            tangent: true,
            fd_eps: Some(1e-5),
            exec: Execution::default(),
        }
    }
}

impl Oracles {
    pub fn none() -> Self {
        Self {
            directions: Vec::new(),
            tangent: false,
            fd_eps: None,
            exec: Execution::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SensitivityReport {
    pub adjoint_p0: Vector,
    pub directions: Vec<Vector>,
    /// `⟨p₀, d⟩` for each direction.
    pub adjoint_values: Vec<f64>,
    pub tangent_values: Vec<f64>,
    pub fd_values: Vec<f64>,
    pub max_adjoint_vs_tangent: f64,
    pub max_adjoint_vs_fd: f64,
    /// Discrete cost on the unperturbed trajectory.
    pub cost_value: f64,
    pub backward_sweeps: usize,
    pub tangent_sweeps: usize,
}

fn basis(n: usize) -> Vec<Vector> {
    (0..n)
        .map(|j| {
            let mut e = Vector::zeros(n);
            e[j] = 1.0;
            e
        })
        .collect()
}

/// `k` unit-norm directions in `Rⁿ`, reproducible from `seed`.
pub fn random_directions(n: usize, k: usize, seed: u64) -> Vec<Vector> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..k)
        .map(|_| loop {
            let v = Vector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
            let norm = v.norm();
            if norm > 1e-3 {
                break v / norm;
            }
        })
        .collect()
}

fn tangent_from(setup: &Setup, base: &Trajectory, cost: &Cost, dq0: &Vector) -> Result<f64> {
    let mut traj = base.clone();
    tangent_sweep(&mut traj, &setup.dae, &setup.tableau, dq0)?;
    match cost {
        Cost::Terminal(c) => {
            let last = traj.final_state();
            Ok(c.gradient(&last.q)?.dot(last.dq.as_ref().expect("tangent sweep sets dq")))
        }
        Cost::Running(l) => {
            let t = &setup.tableau;
            let mut acc = 0.0;
            for (st, ts) in traj.stages.iter().zip(&traj.tangent_stages) {
                for i in 0..t.stages() {
                    let (gq, gu) = l.gradients(&st.q[i], &st.u[i])?;
                    acc += traj.h * t.b[i] * (gq.dot(&ts.dq[i]) + gu.dot(&ts.du[i]));
                }
            }
            Ok(acc)
        }
    }
}

/// Directional derivative of the discrete cost by a forward-plus-tangent run.
pub fn tangent_sensitivity(setup: &Setup, cost: &Cost, dq0: &Vector) -> Result<f64> {
    let base = setup.forward(&setup.q0)?;
    tangent_from(setup, &base, cost, dq0)
}

/// Central difference of the discrete cost along `direction`.
pub fn fd_sensitivity(setup: &Setup, cost: &Cost, direction: &Vector, eps: f64) -> Result<f64> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::Input(format!("finite-difference step must be > 0, got {eps}")));
    }
    if direction.len() != setup.q0.len() {
        return Err(Error::dim("direction", setup.q0.len(), direction.len()));
    }
    let plus = setup.forward(&(&setup.q0 + direction * eps))?;
    let minus = setup.forward(&(&setup.q0 - direction * eps))?;
    let t = &setup.tableau;
    Ok((trajectory_cost(t, &plus, cost)? - trajectory_cost(t, &minus, cost)?) / (2.0 * eps))
}

fn sensitivity(setup: &Setup, cost: &Cost, oracles: &Oracles) -> Result<SensitivityReport> {
    let mut traj = setup.forward(&setup.q0)?;
    let base = traj.clone();
    let n = setup.dae.dim_q;
    let (adj, p_terminal) = match cost {
        Cost::Terminal(c) => (
            AdjointSystem {
                base: setup.dae.clone(),
                running_cost: None,
            },
            c.gradient(&traj.final_state().q)?,
        ),
        Cost::Running(l) => (
            AdjointSystem {
                base: setup.dae.clone(),
                running_cost: Some(l.clone()),
            },
            Vector::zeros(n),
        ),
    };
    adjoint_sweep(&mut traj, &adj, &setup.tableau, &p_terminal)?;
    let p0 = traj.states[0].p.clone().expect("adjoint sweep sets p");

    let directions = if oracles.directions.is_empty() {
        basis(n)
    } else {
        for d in &oracles.directions {
            if d.len() != n {
                return Err(Error::dim("direction", n, d.len()));
            }
        }
        oracles.directions.clone()
    };
    let adjoint_values: Vec<f64> = directions.iter().map(|d| p0.dot(d)).collect();

    let tangent_values = if oracles.tangent {
        par::map(oracles.exec, &directions, |d| tangent_from(setup, &base, cost, d))
            .into_iter()
            .collect::<Result<Vec<_>>>()?
    } else {
        Vec::new()
    };
    let fd_values = match oracles.fd_eps {
        Some(eps) => par::map(oracles.exec, &directions, |d| fd_sensitivity(setup, cost, d, eps))
            .into_iter()
            .collect::<Result<Vec<_>>>()?,
        None => Vec::new(),
    };
    let max_gap = |other: &[f64]| {
        other
            .iter()
            .zip(&adjoint_values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    };
    Ok(SensitivityReport {
        max_adjoint_vs_tangent: max_gap(&tangent_values),
        max_adjoint_vs_fd: max_gap(&fd_values),
        cost_value: trajectory_cost(&setup.tableau, &base, cost)?,
        backward_sweeps: traj.backward_sweeps,
        tangent_sweeps: tangent_values.len(),
        adjoint_p0: p0,
        directions,
        adjoint_values,
        tangent_values,
        fd_values,
    })
}

/// Gradient of `C(q_N)` with respect to `q₀`: seed `p_N = ∇C(q_N)`, one
/// backward sweep of the plain adjoint.
pub fn terminal_sensitivity(setup: &Setup, cost: &TerminalCost, oracles: &Oracles) -> Result<SensitivityReport> {
    sensitivity(setup, &Cost::Terminal(cost.clone()), oracles)
}

/// Gradient of the quadrature of `L` with respect to `q₀`: seed `p_N = 0`, one
/// backward sweep of the augmented adjoint.
pub fn running_sensitivity(setup: &Setup, cost: &RunningCost, oracles: &Oracles) -> Result<SensitivityReport> {
    sensitivity(setup, &Cost::Running(cost.clone()), oracles)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::builtin;
    use crate::tableau::builtin_tableau;
    use nalgebra::dvector;
    use std::f64::consts::E;

    fn setup(name: &str, tableau: &str, steps: usize) -> Setup {
        Setup::from_record(&builtin(name).unwrap(), builtin_tableau(tableau).unwrap(), steps, NewtonConfig::default()).unwrap()
    }

    #[test]
    fn exp_dae_terminal_matches_e() {
        let s = setup("exp-dae", "radauIIA2", 200);
        let r = terminal_sensitivity(&s, &TerminalCost::linear(dvector![1.0]), &Oracles::default()).unwrap();
        assert!((r.adjoint_p0[0] - E).abs() <= 1e-6);
        assert!(r.max_adjoint_vs_tangent <= 1e-12);
        assert!(r.max_adjoint_vs_fd <= 1e-7);
        assert_eq!(r.backward_sweeps, 1);
    }

    #[test]
    fn constant_cost_has_zero_gradient() {
        let s = setup("nl-dae", "gauss2", 20);
        let r = terminal_sensitivity(&s, &TerminalCost::constant(3.0), &Oracles::none()).unwrap();
        assert_eq!(r.adjoint_p0[0], 0.0);
        let r = running_sensitivity(&s, &RunningCost::zero(), &Oracles::none()).unwrap();
        assert_eq!(r.adjoint_p0[0], 0.0);
    }

    #[test]
    fn nl_dae_terminal_matches_closed_form_derivative() {
        // d/dα [α / (α + (1−α) e)] = e / (α + (1−α) e)²
        let s = setup("nl-dae", "radauIIA2", 200);
        let r = terminal_sensitivity(&s, &TerminalCost::linear(dvector![1.0]), &Oracles::none()).unwrap();
        let den: f64 = 0.5 + 0.5 * E;
        assert!((r.adjoint_p0[0] - E / (den * den)).abs() <= 1e-6);
    }

    #[test]
    fn exp_dae_running_matches_closed_form() {
        let s = setup("exp-dae", "radauIIA2", 200);
        let r = running_sensitivity(&s, &RunningCost::half_q_squared(), &Oracles::default()).unwrap();
        assert!((r.adjoint_p0[0] - (E * E - 1.0) / 2.0).abs() <= 1e-5);
        assert!(r.max_adjoint_vs_tangent <= 1e-12);
        assert!((r.cost_value - (E * E - 1.0) / 4.0).abs() <= 1e-5);
    }

    #[test]
    fn tangent_edge_cases() {
        let s = setup("exp-dae", "radauIIA2", 200);
        let c = Cost::Terminal(TerminalCost::linear(dvector![1.0]));
        assert_eq!(tangent_sensitivity(&s, &c, &dvector![0.0]).unwrap(), 0.0);
        assert!((tangent_sensitivity(&s, &c, &dvector![1.0]).unwrap() - E).abs() <= 1e-6);
    }

    #[test]
    fn fd_checks() {
        let s = setup("exp-dae", "midpoint", 10);
        let c = Cost::Terminal(TerminalCost::linear(dvector![1.0]));
        assert!(matches!(fd_sensitivity(&s, &c, &dvector![1.0], 0.0), Err(Error::Input(_))));
        let t = tangent_sensitivity(&s, &c, &dvector![1.0]).unwrap();
        for eps in [1e-1, 1e-3, 1e-5] {
            assert!((fd_sensitivity(&s, &c, &dvector![1.0], eps).unwrap() - t).abs() <= 1e-9);
        }
    }

    #[test]
    fn directions_are_reproducible() {
        let a = random_directions(3, 5, 7);
        assert_eq!(a, random_directions(3, 5, 7));
        assert_ne!(a, random_directions(3, 5, 8));
        assert!(a.iter().all(|d| (d.norm() - 1.0).abs() < 1e-14));
    }
}
