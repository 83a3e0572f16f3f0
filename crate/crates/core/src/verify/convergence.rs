use crate::adjoint::AdjointSystem;
use crate::integrate::{adjoint_sweep, forward_sweep, Trajectory};
use crate::par::{self, Execution};
use crate::solver::NewtonConfig;
use crate::systems::{ProblemRecord, SemiExplicitDAE};
use crate::tableau::Tableau;
use crate::{Error, Result, Vector};

/// Errors at or below this level are treated as roundoff.
const ERROR_FLOOR: f64 = 1e-13;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reference {
    ClosedForm,
    /// A run at half the smallest step.
    Richardson,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceRow {
    pub h: f64,
    pub steps: usize,
    /// Max-norm errors over all nodes.
    pub err_q: f64,
    pub err_p: f64,
    pub err_u: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct ConvergenceReport {
    pub rows: Vec<ConvergenceRow>,
    pub order_q: f64,
    pub order_p: f64,
    pub order_u: Option<f64>,
    /// False when some error sits at the roundoff floor or errors do not
    /// decrease with `h`.
    pub reliable: bool,
    pub reference: Reference,
}

/// Least-squares slope of `ln err` against `ln h`.
pub(crate) fn fitted_slope(h: &[f64], err: &[f64]) -> f64 {
    let x: Vec<f64> = h.iter().map(|v| v.ln()).collect();
    let y: Vec<f64> = err.iter().map(|v| v.max(f64::MIN_POSITIVE).ln()).collect();
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

fn trustworthy(err: &[f64]) -> bool {
    err.iter().all(|e| *e > ERROR_FLOOR) && err.windows(2).all(|w| w[1] < w[0])
}

fn steps_for(h: f64, tf: f64) -> Result<usize> {
    let n = (tf / h).round();
    if !(h > 0.0) || n < 1.0 || (n * h - tf).abs() > 1e-9 * tf.max(1.0) {
        return Err(Error::Input(format!("step {h} does not divide tf = {tf} into a whole number of steps")));
    }
    Ok(n as usize)
}

fn run(dae: &SemiExplicitDAE, rec: &ProblemRecord, t: &Tableau, h: f64, n: usize, cfg: &NewtonConfig) -> Result<Trajectory> {
    let mut tr = forward_sweep(dae, t, &rec.q0, &rec.u_guess, h, n, cfg)?;
    let adj = AdjointSystem {
        base: dae.clone(),
        running_cost: None,
    };
    adjoint_sweep(&mut tr, &adj, t, &Vector::from_element(dae.dim_q, 1.0))?;
    Ok(tr)
}

/// Estimates convergence orders of `q`, `p` (and `u` for DAEs) on a geometric
/// ladder of step sizes. The adjoint is seeded with `p(t_f) = (1,…,1)`.
///
/// The reference is the registry's closed form when available; otherwise a
/// run at half the smallest step, compared at the shared nodes.
pub fn convergence_order(
    rec: &ProblemRecord,
    t: &Tableau,
    h_list: &[f64],
    tf: f64,
    cfg: &NewtonConfig,
    exec: Execution,
) -> Result<ConvergenceReport> {
    if h_list.len() < 4 {
        return Err(Error::Input(format!("need at least 4 step sizes, got {}", h_list.len())));
    }
    let mut hs = h_list.to_vec();
    hs.sort_by(|a, b| b.partial_cmp(a).expect("finite step sizes"));
    let ratio = hs[0] / hs[1];
    if !(ratio > 1.0) || hs.windows(2).any(|w| ((w[0] / w[1]) - ratio).abs() > 1e-9 * ratio) {
        return Err(Error::Input("step sizes must form a geometric ladder".into()));
    }
    let steps = hs.iter().map(|h| steps_for(*h, tf)).collect::<Result<Vec<_>>>()?;
    let dae = rec.index1_dae()?;
    let pf = Vector::from_element(dae.dim_q, 1.0);

    let runs = par::map_range(exec, hs.len(), |i| run(&dae, rec, t, hs[i], steps[i], cfg))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;

    let (reference, rows) = match &rec.closed_form {
        Some(cf) => {
            let rows = runs
                .iter()
                .map(|tr| {
                    let mut row = ConvergenceRow {
                        h: tr.h,
                        steps: tr.steps(),
                        err_q: 0.0,
                        err_p: 0.0,
                        err_u: None,
                    };
                    for (k, s) in tr.states.iter().enumerate() {
                        let tk = tr.times[k];
                        let q_ex = (cf.flow)(tk, &rec.q0);
                        row.err_q = row.err_q.max((&s.q - &q_ex).amax());
                        row.err_p = row.err_p.max((s.p.as_ref().unwrap() - cf.momentum(tk, tf, &rec.q0, &pf)).amax());
                        if let (Some(alg), true) = (&cf.algebraic, dae.dim_u > 0) {
                            let e = (&s.u - alg(&q_ex)).amax();
                            row.err_u = Some(row.err_u.unwrap_or(0.0).max(e));
                        }
                    }
                    row
                })
                .collect();
            (Reference::ClosedForm, rows)
        }
        None => {
            let h_ref = hs[hs.len() - 1] / 2.0;
            let fine = run(&dae, rec, t, h_ref, steps[steps.len() - 1] * 2, cfg)?;
            let rows = runs
                .iter()
                .map(|tr| {
                    let r = (tr.h / h_ref).round() as usize;
                    let mut row = ConvergenceRow {
                        h: tr.h,
                        steps: tr.steps(),
                        err_q: 0.0,
                        err_p: 0.0,
                        err_u: (dae.dim_u > 0).then_some(0.0),
                    };
                    for (k, s) in tr.states.iter().enumerate() {
                        let f = &fine.states[k * r];
                        row.err_q = row.err_q.max((&s.q - &f.q).amax());
                        row.err_p = row.err_p.max((s.p.as_ref().unwrap() - f.p.as_ref().unwrap()).amax());
                        if let Some(e) = row.err_u.as_mut() {
                            *e = e.max((&s.u - &f.u).amax());
                        }
                    }
                    row
                })
                .collect();
            (Reference::Richardson, rows)
        }
    };

    let rows: Vec<ConvergenceRow> = rows;
    let h: Vec<f64> = rows.iter().map(|r| r.h).collect();
    let eq: Vec<f64> = rows.iter().map(|r| r.err_q).collect();
    let ep: Vec<f64> = rows.iter().map(|r| r.err_p).collect();
    let eu: Option<Vec<f64>> = rows.iter().map(|r| r.err_u).collect();
    let mut reliable = trustworthy(&eq) && trustworthy(&ep);
    if let Some(eu) = &eu {
        reliable &= trustworthy(eu);
    }
    Ok(ConvergenceReport {
        order_q: fitted_slope(&h, &eq),
        order_p: fitted_slope(&h, &ep),
        order_u: eu.map(|e| fitted_slope(&h, &e)),
        rows,
        reliable,
        reference,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::builtin;
    use crate::tableau::builtin_tableau;

    const LADDER: [f64; 4] = [0.2, 0.1, 0.05, 0.025];

    fn order(problem: &str, tableau: &str) -> ConvergenceReport {
        convergence_order(
            &builtin(problem).unwrap(),
            &builtin_tableau(tableau).unwrap(),
            &LADDER,
            1.0,
            &NewtonConfig::default(),
            Execution::default(),
        )
        .unwrap()
    }

    #[test]
    fn slope_of_exact_power_law() {
        let h = [0.4, 0.2, 0.1, 0.05];
        let e: Vec<f64> = h.iter().map(|x: &f64| 3.0 * x.powi(3)).collect();
        assert!((fitted_slope(&h, &e) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn gauss2_on_nl_dae() {
        let r = order("nl-dae", "gauss2");
        assert!((3.7..=4.3).contains(&r.order_q), "{r:?}");
        assert!(r.reliable);
        assert_eq!(r.rows.len(), 4);
    }

    #[test]
    fn radau2_on_nl_dae_including_u() {
        let r = order("nl-dae", "radauIIA2");
        assert!((2.7..=3.3).contains(&r.order_q), "{r:?}");
        assert!(r.order_u.unwrap() >= 2.7, "{r:?}");
    }

    #[test]
    fn midpoint_on_exp_dae() {
        let r = order("exp-dae", "midpoint");
        assert!((1.8..=2.2).contains(&r.order_q), "{r:?}");
    }

    #[test]
    fn bad_ladders_are_rejected() {
        let rec = builtin("nl-dae").unwrap();
        let t = builtin_tableau("gauss2").unwrap();
        let cfg = NewtonConfig::default();
        assert!(convergence_order(&rec, &t, &[0.2, 0.1, 0.05], 1.0, &cfg, Execution::Sequential).is_err());
        assert!(convergence_order(&rec, &t, &[0.2, 0.1, 0.04, 0.02], 1.0, &cfg, Execution::Sequential).is_err());
        assert!(convergence_order(&rec, &t, &[0.3, 0.15, 0.075, 0.0375], 1.0, &cfg, Execution::Sequential).is_err());
    }

    #[test]
    fn richardson_fallback() {
        let mut rec = builtin("nl-dae").unwrap();
        rec.closed_form = None;
        let r = convergence_order(&rec, &builtin_tableau("gauss2").unwrap(), &LADDER, 1.0, &NewtonConfig::default(), Execution::default()).unwrap();
        assert_eq!(r.reference, Reference::Richardson);
        assert!((3.5..=4.5).contains(&r.order_q), "{r:?}");
    }
}
