use crate::adjoint::{reduce_index1, AdjointSystem, ReducedODE};
use crate::integrate::{adjoint_sweep, forward_sweep, stage_matrix, StageSet, Trajectory};
use crate::par::{self, Execution};
use crate::solver::{DenseLu, NewtonConfig};
use crate::systems::SemiExplicitDAE;
use crate::tableau::Tableau;
use crate::{Error, Result, Vector};

/// Routes from the index-1 DAE to a discrete adjoint of the reduced flow.
pub const CUBE_PATHS: [&str; 4] = [
    "reduce>adjoint>discretize",
    "adjoint>discretize>reduce",
    "discretize>discrete-adjoint",
    "reduce>discretize>discrete-adjoint",
];

#[derive(Debug, Clone)]
pub struct CubePath {
    pub label: &'static str,
    pub q: Vec<Vector>,
    pub p: Vec<Vector>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CubePair {
    pub path_a: &'static str,
    pub path_b: &'static str,
    pub max_dq: f64,
    pub max_dp: f64,
}

#[derive(Debug, Clone)]
pub struct CubeReport {
    pub paths: Vec<CubePath>,
    pub pairs: Vec<CubePair>,
}

impl CubeReport {
    pub fn max_discrepancy(&self) -> f64 {
        self.pairs.iter().map(|p| p.max_dq.max(p.max_dp)).fold(0.0, f64::max)
    }
}

/// Transpose of the derivative of the step map `q₀ ↦ q₁`, applied to `p₁`.
///
/// Differentiates the solved stage system `F(X; q₀) = 0` implicitly:
/// `p₀ = p₁ − (∂F/∂q₀)ᵀ M⁻ᵀ g`, where `M` is the stage matrix and `g` holds
/// `h bᵢ p₁` in the velocity rows.
pub fn discrete_adjoint_step(t: &Tableau, stages: &StageSet, h: f64, p1: &Vector) -> Result<Vector> {
    let s = t.stages();
    let jac = &stages.jac;
    let nd = jac[0].dqf.nrows();
    let na = jac[0].duf.ncols();
    let m = jac[0].dqphi.nrows();
    let lu = DenseLu::new(stage_matrix(t, h, jac)).ok_or_else(|| Error::Singular {
        context: "transposed stage system".into(),
        iterate: 0,
    })?;
    let mut g = Vector::zeros(s * (nd + na));
    for i in 0..s {
        g.rows_mut(i * nd, nd).copy_from(&(p1 * (h * t.b[i])));
    }
    let y = lu.solve_transpose(&g);
    let mut p0 = p1.clone();
    for i in 0..s {
        // ∂F/∂q₀ has −Dqfⁱ in the velocity rows and Dqφⁱ in the constraint rows.
        p0 += jac[i].dqf.tr_mul(&y.rows(i * nd, nd).into_owned());
        p0 -= jac[i].dqphi.tr_mul(&y.rows(s * nd + i * m, m).into_owned());
    }
    Ok(p0)
}

fn discrete_adjoint_sweep(t: &Tableau, traj: &Trajectory, p_terminal: &Vector) -> Result<Vec<Vector>> {
    let n = traj.steps();
    let mut p = vec![Vector::zeros(0); n + 1];
    p[n] = p_terminal.clone();
    for k in (0..n).rev() {
        p[k] = discrete_adjoint_step(t, &traj.stages[k], traj.h, &p[k + 1]).map_err(|e| e.at_step(k))?;
    }
    Ok(p)
}

fn run_path(
    which: usize,
    dae: &SemiExplicitDAE,
    u0: &Vector,
    t: &Tableau,
    q0: &Vector,
    p_terminal: &Vector,
    h: f64,
    n: usize,
    cfg: &NewtonConfig,
) -> Result<CubePath> {
    let nodes_q = |tr: &Trajectory| tr.states.iter().map(|s| s.q.clone()).collect::<Vec<_>>();
    let nodes_p = |tr: &Trajectory| tr.states.iter().map(|s| s.p.clone().unwrap()).collect::<Vec<_>>();
    let reduced = || ReducedODE::new(dae.clone(), u0.clone(), *cfg);
    let empty = Vector::zeros(0);
    let (q, p) = match which {
        0 => {
            let red = reduced()?;
            let mut tr = forward_sweep(&red, t, q0, &empty, h, n, cfg)?;
            let adj = AdjointSystem {
                base: red,
                running_cost: None,
            };
            adjoint_sweep(&mut tr, &adj, t, p_terminal)?;
            (nodes_q(&tr), nodes_p(&tr))
        }
        1 => {
            let mut tr = forward_sweep(dae, t, q0, u0, h, n, cfg)?;
            let adj = AdjointSystem {
                base: dae.clone(),
                running_cost: None,
            };
            adjoint_sweep(&mut tr, &adj, t, p_terminal)?;
            (nodes_q(&tr), nodes_p(&tr))
        }
        2 => {
            let tr = forward_sweep(dae, t, q0, u0, h, n, cfg)?;
            (nodes_q(&tr), discrete_adjoint_sweep(t, &tr, p_terminal)?)
        }
        _ => {
            let red = reduced()?;
            let tr = forward_sweep(&red, t, q0, &empty, h, n, cfg)?;
            (nodes_q(&tr), discrete_adjoint_sweep(t, &tr, p_terminal)?)
        }
    };
    Ok(CubePath {
        label: CUBE_PATHS[which],
        q,
        p,
    })
}

fn max_gap(a: &[Vector], b: &[Vector]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).amax()).fold(0.0, f64::max)
}

/// Runs the four routes of the reduce/adjoint/discretize cube on an index-1
/// DAE (reduce Hessenberg problems first) and compares them node by node.
pub fn naturality_check(
    dae: &SemiExplicitDAE,
    u_guess: &Vector,
    t: &Tableau,
    q0: &Vector,
    p_terminal: &Vector,
    h: f64,
    n: usize,
    cfg: &NewtonConfig,
    exec: Execution,
) -> Result<CubeReport> {
    dae.require_square()?;
    if p_terminal.len() != dae.dim_q {
        return Err(Error::dim("p_terminal", dae.dim_q, p_terminal.len()));
    }
    let u0 = reduce_index1(dae, q0, u_guess, cfg)?.u;
    let paths = par::map_range(exec, CUBE_PATHS.len(), |i| run_path(i, dae, &u0, t, q0, p_terminal, h, n, cfg))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let mut pairs = Vec::new();
    for a in 0..paths.len() {
        for b in a + 1..paths.len() {
            pairs.push(CubePair {
                path_a: paths[a].label,
                path_b: paths[b].label,
                max_dq: max_gap(&paths[a].q, &paths[b].q),
                max_dp: max_gap(&paths[a].p, &paths[b].p),
            });
        }
    }
    Ok(CubeReport { paths, pairs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::builtin;
    use crate::tableau::builtin_tableau;
    use nalgebra::dvector;

    fn cube(name: &str, tableau: &str, h: f64, n: usize) -> CubeReport {
        let rec = builtin(name).unwrap();
        let dae = rec.index1_dae().unwrap();
        let pf = Vector::from_element(dae.dim_q, 1.0);
        naturality_check(
            &dae,
            &rec.u_guess,
            &builtin_tableau(tableau).unwrap(),
            &rec.q0,
            &pf,
            h,
            n,
            &NewtonConfig::default(),
            Execution::default(),
        )
        .unwrap()
    }

    #[test]
    fn nl_dae_paths_commute() {
        let r = cube("nl-dae", "radauIIA2", 0.05, 20);
        assert_eq!(r.pairs.len(), 6);
        assert!(r.max_discrepancy() <= 1e-10, "{:?}", r.pairs);
    }

    #[test]
    fn exp_dae_paths_agree_for_every_tableau() {
        for name in ["midpoint", "gauss2", "gauss3", "radauIIA2", "radauIIA3"] {
            let r = cube("exp-dae", name, 0.1, 10);
            assert!(r.max_discrepancy() <= 1e-12, "{name}: {:?}", r.pairs);
        }
    }

    #[test]
    fn reduced_hessenberg_paths_commute() {
        let r = cube("hess2", "radauIIA2", 0.05, 20);
        assert!(r.max_discrepancy() <= 1e-10, "{:?}", r.pairs);
    }

    #[test]
    fn discrete_adjoint_of_midpoint_on_growth() {
        let rec = builtin("exp-dae").unwrap();
        let dae = rec.index1_dae().unwrap();
        let t = builtin_tableau("midpoint").unwrap();
        let tr = forward_sweep(&dae, &t, &dvector![1.0], &dvector![1.0], 0.1, 1, &NewtonConfig::default()).unwrap();
        let p0 = discrete_adjoint_step(&t, &tr.stages[0], 0.1, &dvector![1.0]).unwrap();
        assert!((p0[0] - 1.05 / 0.95).abs() <= 1e-14);
    }
}
