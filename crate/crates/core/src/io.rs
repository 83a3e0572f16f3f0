//! CSV export of trajectories and verification results.
//!
//! Floats are written in the shortest form that parses back to the same
//! `f64`, so files are reproducible byte for byte.

use std::io::Write;

use crate::integrate::Trajectory;
use crate::sensitivity::SensitivityReport;
use crate::verify::{AuditRow, ConvergenceRow, CubeReport};
use crate::{Error, Result, Vector};

/// Shortest round-trip representation.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}

fn out(e: impl std::fmt::Display) -> Error {
    Error::Output(e.to_string())
}

fn writer<W: Write>(w: W, header: Vec<String>) -> Result<csv::Writer<W>> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(&header).map_err(out)?;
    Ok(wr)
}

fn names(prefix: &str, n: usize) -> impl Iterator<Item = String> + '_ {
    (0..n).map(move |i| format!("{prefix}{i}"))
}

fn push_vec(row: &mut Vec<String>, v: &Vector) {
    row.extend(v.iter().map(|x| fmt_f64(*x)));
}

/// One row per node: `t, q…, u…` followed by `p…, lambda…` when momenta are
/// present and `dq…, du…` when tangent data is present.
pub fn write_trajectory<W: Write>(w: W, traj: &Trajectory) -> Result<()> {
    let s0 = &traj.states[0];
    let (nd, na) = (s0.q.len(), s0.u.len());
    let nl = s0.lambda.as_ref().map_or(0, |l| l.len());
    let (mom, tan) = (traj.has_momenta(), traj.has_tangent());
    let mut header = vec!["t".to_string()];
    header.extend(names("q", nd));
    header.extend(names("u", na));
    if mom {
        header.extend(names("p", nd));
        header.extend(names("lambda", nl));
    }
    if tan {
        header.extend(names("dq", nd));
        header.extend(names("du", na));
    }
    let mut wr = writer(w, header)?;
    for (t, s) in traj.times.iter().zip(&traj.states) {
        let mut row = vec![fmt_f64(*t)];
        push_vec(&mut row, &s.q);
        push_vec(&mut row, &s.u);
        if mom {
            push_vec(&mut row, s.p.as_ref().unwrap());
            push_vec(&mut row, s.lambda.as_ref().unwrap());
        }
        if tan {
            push_vec(&mut row, s.dq.as_ref().unwrap());
            push_vec(&mut row, s.du.as_ref().unwrap());
        }
        wr.write_record(&row).map_err(out)?;
    }
    wr.flush().map_err(out)
}

/// One row per stage: `step, stage, t, Q…, U…, V…` and `P…, Lambda…` when set.
pub fn write_stages<W: Write>(w: W, traj: &Trajectory, c: &Vector) -> Result<()> {
    let Some(first) = traj.stages.first() else {
        return writer(w, vec!["step".into(), "stage".into(), "t".into()])?.flush().map_err(out);
    };
    let (nd, na) = (first.q[0].len(), first.u[0].len());
    let mom = !first.p.is_empty();
    let nl = if mom { first.lambda[0].len() } else { 0 };
    let mut header = vec!["step".to_string(), "stage".into(), "t".into()];
    header.extend(names("Q", nd));
    header.extend(names("U", na));
    header.extend(names("V", nd));
    if mom {
        header.extend(names("P", nd));
        header.extend(names("Lambda", nl));
    }
    let mut wr = writer(w, header)?;
    for (k, st) in traj.stages.iter().enumerate() {
        for i in 0..st.q.len() {
            let mut row = vec![k.to_string(), i.to_string(), fmt_f64(traj.times[k] + c[i] * traj.h)];
            push_vec(&mut row, &st.q[i]);
            push_vec(&mut row, &st.u[i]);
            push_vec(&mut row, &st.v[i]);
            if mom {
                push_vec(&mut row, &st.p[i]);
                push_vec(&mut row, &st.lambda[i]);
            }
            wr.write_record(&row).map_err(out)?;
        }
    }
    wr.flush().map_err(out)
}

/// `step,t,pairing,defect,constraint_res,momentum_res,H,Hd` plus `symmetry`
/// when the rows carry it.
pub fn write_audit<W: Write>(w: W, rows: &[AuditRow]) -> Result<()> {
    let sym = rows.first().is_some_and(|r| r.symmetry_momentum.is_some());
    let mut header: Vec<String> = ["step", "t", "pairing", "defect", "constraint_res", "momentum_res", "H", "Hd"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    if sym {
        header.push("symmetry".into());
    }
    let mut wr = writer(w, header)?;
    for r in rows {
        let mut row = vec![
            r.step.to_string(),
            fmt_f64(r.t),
            fmt_f64(r.pairing),
            fmt_f64(r.pairing_defect),
            fmt_f64(r.constraint_residual_max),
            fmt_f64(r.momentum_constraint_residual_max),
            fmt_f64(r.hamiltonian),
            fmt_f64(r.dynamical_hamiltonian),
        ];
        if let Some(s) = r.symmetry_momentum.filter(|_| sym) {
            row.push(fmt_f64(s));
        }
        wr.write_record(&row).map_err(out)?;
    }
    wr.flush().map_err(out)
}

pub fn write_cube<W: Write>(w: W, report: &CubeReport) -> Result<()> {
    let mut wr = writer(w, ["path_a", "path_b", "max_dq", "max_dp"].iter().map(|s| s.to_string()).collect())?;
    for p in &report.pairs {
        wr.write_record([p.path_a.to_string(), p.path_b.to_string(), fmt_f64(p.max_dq), fmt_f64(p.max_dp)])
            .map_err(out)?;
    }
    wr.flush().map_err(out)
}

/// `h,err_q,err_p` plus `err_u` for DAEs.
pub fn write_convergence<W: Write>(w: W, rows: &[ConvergenceRow]) -> Result<()> {
    let with_u = rows.first().is_some_and(|r| r.err_u.is_some());
    let mut header: Vec<String> = ["h", "err_q", "err_p"].iter().map(|s| s.to_string()).collect();
    if with_u {
        header.push("err_u".into());
    }
    let mut wr = writer(w, header)?;
    for r in rows {
        let mut row = vec![fmt_f64(r.h), fmt_f64(r.err_q), fmt_f64(r.err_p)];
        if let Some(e) = r.err_u.filter(|_| with_u) {
            row.push(fmt_f64(e));
        }
        wr.write_record(&row).map_err(out)?;
    }
    wr.flush().map_err(out)
}

/// `direction_index,adjoint,tangent,fd,err_adj_tan,err_adj_fd`; legs that were
/// not run are left empty.
pub fn write_sensitivity<W: Write>(w: W, report: &SensitivityReport) -> Result<()> {
    let header = ["direction_index", "adjoint", "tangent", "fd", "err_adj_tan", "err_adj_fd"];
    let mut wr = writer(w, header.iter().map(|s| s.to_string()).collect())?;
    for (i, a) in report.adjoint_values.iter().enumerate() {
        let tan = report.tangent_values.get(i);
        let fd = report.fd_values.get(i);
        let cell = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
        wr.write_record([
            i.to_string(),
            fmt_f64(*a),
            cell(tan.copied()),
            cell(fd.copied()),
            cell(tan.map(|t| (t - a).abs())),
            cell(fd.map(|f| (f - a).abs())),
        ])
        .map_err(out)?;
    }
    wr.flush().map_err(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adjoint::lift_dae;
    use crate::integrate::{integrate_trajectory, Mode};
    use crate::solver::NewtonConfig;
    use crate::systems::builtin;
    use crate::tableau::builtin_tableau;
    use nalgebra::dvector;

    #[test]
    fn round_trip_formatting() {
        for x in [0.1, 1.0 / 3.0, 1e-300, -2.5e17, 0.0] {
            assert_eq!(fmt_f64(x).parse::<f64>().unwrap(), x);
        }
        assert_eq!(fmt_f64(0.5), "0.5");
    }

    #[test]
    fn trajectory_csv_shape() {
        let rec = builtin("nl-dae").unwrap();
        let t = builtin_tableau("radauIIA2").unwrap();
        let adj = lift_dae(rec.index1_dae().unwrap(), None);
        let tr = integrate_trajectory(&adj, &t, &rec.q0, &rec.u_guess, 0.1, 3, &NewtonConfig::default(), &Mode::AdjointTerminal(dvector![1.0])).unwrap();
        let mut buf = Vec::new();
        write_trajectory(&mut buf, &tr).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t,q0,u0,p0,lambda0");
        assert_eq!(lines.len(), 5);
        assert!(lines[1].starts_with("0.0,0.5,0.25,"));

        let mut buf = Vec::new();
        write_stages(&mut buf, &tr, &t.c).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + 3 * 2);
        assert!(text.starts_with("step,stage,t,Q0,U0,V0,P0,Lambda0\n"));
    }
}
