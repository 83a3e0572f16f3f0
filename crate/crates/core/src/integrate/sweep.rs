use log::warn;

use super::step::{adjoint_step_type2, rk_step, tangent_step};
use super::{AdjointDAEState, Trajectory};
use crate::adjoint::{reduce_index1, solve_multiplier, tangent_system, AdjointSystem};
use crate::solver::NewtonConfig;
use crate::systems::{DaeModel, RunningCost};
use crate::tableau::{symplectic_adjoint, Tableau};
use crate::{Error, Result, Vector};

#[derive(Debug, Clone)]
pub enum Mode {
    Forward,
    /// Forward sweep plus a tangent sweep started at `δq₀`.
    Tangent(Vector),
    /// Backward sweep of the plain adjoint seeded with `p_N = p_f`.
    AdjointTerminal(Vector),
    /// Backward sweep of the augmented adjoint seeded with `p_N = 0`.
    AdjointRunning(RunningCost),
}

fn node_u<M: DaeModel + ?Sized>(model: &M, t: &Tableau, q: &Vector, u_last_stage: &Vector, cfg: &NewtonConfig) -> Result<Vector> {
    if model.dim_u() == 0 || t.is_stiffly_accurate() {
        return Ok(u_last_stage.clone());
    }
    Ok(reduce_index1(model, q, u_last_stage, cfg)?.u)
}

/// Forward sweep of `N` fixed steps, storing every stage set.
///
/// The initial algebraic state is made consistent with `q₀` by Newton from
/// `u_guess`; later nodes take `Uˢ` when `c_s = 1` and a node solve otherwise.
pub fn forward_sweep<M: DaeModel + ?Sized>(
    model: &M,
    t: &Tableau,
    q0: &Vector,
    u_guess: &Vector,
    h: f64,
    n: usize,
    cfg: &NewtonConfig,
) -> Result<Trajectory> {
    cfg.validate()?;
    if q0.len() != model.dim_q() {
        return Err(Error::dim("q0", model.dim_q(), q0.len()));
    }
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::Input(format!("step size must be finite and > 0, got {h}")));
    }
    if model.dim_u() > 0 && !t.is_stiffly_accurate() {
        warn!("tableau '{}' has c_s != 1; node constraints are enforced by separate solves", t.name);
    }
    let u0 = if model.dim_u() == 0 {
        Vector::zeros(0)
    } else {
        reduce_index1(model, q0, u_guess, cfg)?.u
    };
    let mut states = Vec::with_capacity(n + 1);
    let mut stages = Vec::with_capacity(n);
    states.push(AdjointDAEState {
        q: q0.clone(),
        u: u0,
        p: None,
        lambda: None,
        dq: None,
        du: None,
    });
    for k in 0..n {
        let prev = &states[k];
        let (q1, st) = rk_step(model, t, &prev.q, &prev.u, h, cfg).map_err(|e| e.at_step(k))?;
        let u1 = node_u(model, t, &q1, st.u.last().expect("nonempty tableau"), cfg).map_err(|e| e.at_step(k))?;
        states.push(AdjointDAEState {
            q: q1,
            u: u1,
            p: None,
            lambda: None,
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
        augmented: false,
        backward_sweeps: 0,
    })
}

/// Tangent sweep along a stored forward trajectory.
pub fn tangent_sweep<M: DaeModel + ?Sized>(traj: &mut Trajectory, model: &M, t: &Tableau, dq0: &Vector) -> Result<()> {
    if dq0.len() != model.dim_q() {
        return Err(Error::dim("dq0", model.dim_q(), dq0.len()));
    }
    let ts = tangent_system(model);
    let mut dq = dq0.clone();
    let mut tangent = Vec::with_capacity(traj.steps());
    for k in 0..=traj.steps() {
        let (state, _) = ts.complete(&traj.states[k].q, &traj.states[k].u, &dq).map_err(|e| e.at_step(k))?;
        traj.states[k].dq = Some(state.dq);
        traj.states[k].du = Some(state.du);
        if k < traj.steps() {
            let (dq1, stg) = tangent_step(t, &traj.stages[k], traj.h, &dq).map_err(|e| e.at_step(k))?;
            tangent.push(stg);
            dq = dq1;
        }
    }
    traj.tangent_stages = tangent;
    Ok(())
}

/// Backward momentum sweep with the Type II step, reusing the stored stages.
pub fn adjoint_sweep<M: DaeModel>(traj: &mut Trajectory, adj: &AdjointSystem<M>, t: &Tableau, p_terminal: &Vector) -> Result<()> {
    let n = traj.steps();
    let at = symplectic_adjoint(t)?;
    let cost = adj.running_cost.as_ref();
    let mut p = p_terminal.clone();
    for k in (0..=n).rev() {
        if k < n {
            let step = adjoint_step_type2(adj, t, &at, &traj.stages[k], traj.h, &p).map_err(|e| e.at_step(k))?;
            traj.stages[k].p = step.stages_p;
            traj.stages[k].lambda = step.stages_lambda;
            p = step.p;
        }
        let s = &mut traj.states[k];
        let lambda = solve_multiplier(&adj.base, &s.q, &s.u, &p, cost).map_err(|e| e.at_step(k))?;
        s.p = Some(p.clone());
        s.lambda = Some(lambda);
    }
    traj.augmented = cost.is_some();
    traj.backward_sweeps += 1;
    Ok(())
}

/// Forward sweep followed by the tangent or backward sweep selected by `mode`.
///
/// The base model is borrowed from `adj`; a running-cost mode replaces the
/// system's running cost for the backward sweep.
pub fn integrate_trajectory<M: DaeModel + Clone>(
    adj: &AdjointSystem<M>,
    t: &Tableau,
    q0: &Vector,
    u_guess: &Vector,
    h: f64,
    n: usize,
    cfg: &NewtonConfig,
    mode: &Mode,
) -> Result<Trajectory> {
    let mut traj = forward_sweep(&adj.base, t, q0, u_guess, h, n, cfg)?;
    match mode {
        Mode::Forward => {}
        Mode::Tangent(dq0) => tangent_sweep(&mut traj, &adj.base, t, dq0)?,
        Mode::AdjointTerminal(pf) => {
            if pf.len() != adj.base.dim_q() {
                return Err(Error::dim("p_terminal", adj.base.dim_q(), pf.len()));
            }
            let plain = AdjointSystem {
                base: adj.base.clone(),
                running_cost: None,
            };
            adjoint_sweep(&mut traj, &plain, t, pf)?;
        }
        Mode::AdjointRunning(cost) => {
            let aug = AdjointSystem {
                base: adj.base.clone(),
                running_cost: Some(cost.clone()),
            };
            adjoint_sweep(&mut traj, &aug, t, &Vector::zeros(adj.base.dim_q()))?;
        }
    }
    Ok(traj)
}
