//! `adjoint-geo` command line.
//!
//! Every subcommand writes its CSV to `--output` and prints one JSON line to
//! stdout. Exit status: 0 when the run met its asserted tolerances, 2 when a
//! conservation law or order check was violated, 1 for usage or solver errors.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use adjoint_geo::adjoint::lift_dae;
use adjoint_geo::integrate::{adjoint_sweep, forward_sweep, tangent_sweep, Trajectory};
use adjoint_geo::io;
use adjoint_geo::ocp::{discrete_extremality_residual, shoot_extremal, ShootingConfig};
use adjoint_geo::par::Execution;
use adjoint_geo::sensitivity::{random_directions, running_sensitivity, terminal_sensitivity, Oracles, Setup};
use adjoint_geo::solver::NewtonConfig;
use adjoint_geo::systems::{builtin, builtin_names, eval_dae, Problem, ProblemRecord, RunningCost, TerminalCost};
use adjoint_geo::tableau::{builtin_tableau, builtin_tableau_names, Tableau};
use adjoint_geo::verify::{audit_invariants, convergence_order, naturality_check, AuditRow};
use adjoint_geo::Vector;
use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

#[derive(Parser)]
#[command(name = "adjoint-geo", version, about = "Structure-preserving adjoint integration for ODEs and index-1 DAEs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Forward, tangent and adjoint sweeps; writes the node trajectory.
    Integrate(RunArgs),
    /// Adjoint gradient of a cost checked against tangent and finite-difference runs.
    Sensitivity {
        #[command(flatten)]
        run: RunArgs,
        /// Number of random unit directions.
        #[arg(long, default_value_t = 5)]
        directions: usize,
        /// Finite-difference step; 0 disables the finite-difference leg.
        #[arg(long, default_value_t = 1e-5)]
        fd_eps: f64,
    },
    /// Per-step audit of the adjoint-variational pairing.
    VerifyInvariants(RunArgs),
    /// Compares the four reduce/adjoint/discretize routes node by node.
    Naturality(RunArgs),
    /// Fitted convergence slope over a ladder of step sizes.
    Convergence {
        #[command(flatten)]
        common: Common,
        /// Comma-separated step sizes, coarse to fine.
        #[arg(long, value_delimiter = ',', required = true)]
        h: Vec<f64>,
    },
    /// Solves the extremality boundary-value problem by single shooting.
    Ocp {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated initial guess for p(0).
        #[arg(long, value_delimiter = ',')]
        p0_guess: Option<Vec<f64>>,
    },
    /// Lists built-in problems and tableaus.
    List,
}

#[derive(Args, Clone)]
struct Common {
    #[arg(long)]
    problem: String,
    #[arg(long, default_value = "radauIIA2")]
    tableau: String,
    /// Final time; defaults to the problem's own horizon.
    #[arg(long)]
    tf: Option<f64>,
    /// Newton tolerance for stage and constraint solves.
    #[arg(long, default_value_t = 1e-12)]
    tol: f64,
    #[arg(long, default_value_t = 50)]
    max_iter: usize,
    /// Output CSV path; defaults to `<subcommand>.csv`.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    /// Number of steps.
    #[arg(long, conflicts_with = "h")]
    steps: Option<usize>,
    /// Step size; must divide the horizon.
    #[arg(long)]
    h: Option<f64>,
    #[arg(long, value_enum, default_value_t = CostMode::Terminal)]
    mode: CostMode,
    /// Also write per-stage data next to the main output.
    #[arg(long)]
    dump_stages: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(ValueEnum, Clone, Copy, PartialEq, Eq)]
enum CostMode {
    /// `½|q(tf)|²`, or terminal momentum of ones for the audit.
    Terminal,
    /// `½(|q|² + |u|²)` integrated over the horizon.
    Running,
}

impl CostMode {
    fn label(self) -> &'static str {
        match self {
            CostMode::Terminal => "terminal",
            CostMode::Running => "running",
        }
    }
}

/// A result that failed its asserted tolerance.
struct Violation {
    summary: Value,
    row: String,
}

type Outcome = anyhow::Result<Result<Value, Violation>>;

/// Resolved problem, tableau, grid and solver settings.
struct Resolved {
    rec: ProblemRecord,
    tableau: Tableau,
    tf: f64,
    steps: usize,
    newton: NewtonConfig,
    output: PathBuf,
}

impl Resolved {
    fn h(&self) -> f64 {
        self.tf / self.steps as f64
    }

    fn summary(&self, sub: &str) -> serde_json::Map<String, Value> {
        let mut m = serde_json::Map::new();
        m.insert("subcommand".into(), json!(sub));
        m.insert("problem".into(), json!(self.rec.name));
        m.insert("tableau".into(), json!(self.tableau.name));
        m.insert("steps".into(), json!(self.steps));
        m.insert("h".into(), json!(self.h()));
        m.insert("output".into(), json!(self.output.display().to_string()));
        m
    }
}

fn newton(common: &Common) -> anyhow::Result<NewtonConfig> {
    let cfg = NewtonConfig {
        tol: common.tol,
        max_iter: common.max_iter,
        ..NewtonConfig::default()
    };
    cfg.validate()?;
    Ok(cfg)
}

fn horizon(common: &Common, rec: &ProblemRecord) -> anyhow::Result<f64> {
    let tf = common.tf.unwrap_or(rec.tf);
    if !(tf >= 0.0) || !tf.is_finite() {
        bail!("--tf must be finite and non-negative, got {tf}");
    }
    Ok(tf)
}

fn resolve(sub: &str, args: &RunArgs) -> anyhow::Result<Resolved> {
    let c = &args.common;
    let rec = builtin(&c.problem)?;
    let tableau = builtin_tableau(&c.tableau)?;
    let tf = horizon(c, &rec)?;
    let steps = match (args.steps, args.h) {
        (Some(n), None) => n,
        (None, Some(h)) => steps_for(h, tf)?,
        _ => bail!("exactly one of --steps or --h is required"),
    };
    Ok(Resolved {
        rec,
        tableau,
        tf,
        steps,
        newton: newton(c)?,
        output: output_path(c, sub),
    })
}

fn steps_for(h: f64, tf: f64) -> anyhow::Result<usize> {
    if !(h > 0.0) || !h.is_finite() {
        bail!("--h must be positive, got {h}");
    }
    let n = (tf / h).round();
    if (n * h - tf).abs() > 1e-9 * tf.max(1.0) {
        bail!("--h {h} does not divide the horizon {tf}");
    }
    Ok(n as usize)
}

fn output_path(c: &Common, sub: &str) -> PathBuf {
    c.output.clone().unwrap_or_else(|| PathBuf::from(format!("{sub}.csv")))
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    let f = File::create(path).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn stages_path(output: &Path) -> PathBuf {
    let stem = output.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    output.with_file_name(format!("{stem}_stages.csv"))
}

fn dump_stages(r: &Resolved, traj: &Trajectory, enabled: bool, summary: &mut serde_json::Map<String, Value>) -> anyhow::Result<()> {
    if enabled {
        let path = stages_path(&r.output);
        io::write_stages(create(&path)?, traj, &r.tableau.c)?;
        summary.insert("stages_output".into(), json!(path.display().to_string()));
    }
    Ok(())
}

/// Forward run, tangent along ones, and an adjoint sweep in the chosen mode.
fn run_triplet(r: &Resolved, mode: CostMode) -> anyhow::Result<(Trajectory, Trajectory, adjoint_geo::adjoint::AdjointDAESystem)> {
    let dae = r.rec.index1_dae()?;
    let n = dae.dim_q;
    let base = forward_sweep(&dae, &r.tableau, &r.rec.q0, &r.rec.u_guess, r.h(), r.steps, &r.newton)?;
    let mut tan = base.clone();
    tangent_sweep(&mut tan, &dae, &r.tableau, &Vector::from_element(n, 1.0))?;
    let (cost, pf) = match mode {
        CostMode::Terminal => (None, Vector::from_element(n, 1.0)),
        CostMode::Running => (Some(RunningCost::half_squares()), Vector::zeros(n)),
    };
    let adj = lift_dae(dae, cost);
    let mut ad = base;
    adjoint_sweep(&mut ad, &adj, &r.tableau, &pf)?;
    Ok((tan, ad, adj))
}

fn integrate(args: &RunArgs) -> Outcome {
    let r = resolve("integrate", args)?;
    let (tan, mut ad, adj) = run_triplet(&r, args.mode)?;
    for (s, ts) in ad.states.iter_mut().zip(&tan.states) {
        s.dq.clone_from(&ts.dq);
        s.du.clone_from(&ts.du);
    }
    ad.tangent_stages = tan.tangent_stages;
    io::write_trajectory(create(&r.output)?, &ad)?;
    let mut summary = r.summary("integrate");
    dump_stages(&r, &ad, args.dump_stages, &mut summary)?;

    // Node constraints are solved to the Newton tolerance.
    let bound = 100.0 * r.newton.tol;
    let mut worst = (0.0_f64, 0usize);
    for (k, s) in ad.states.iter().enumerate() {
        let (_, phi) = eval_dae(&adj.base, &s.q, &s.u)?;
        let res = phi.amax();
        if res > worst.0 {
            worst = (res, k);
        }
    }
    summary.insert("mode".into(), json!(args.mode.label()));
    summary.insert("residual".into(), json!(worst.0));
    summary.insert("p0".into(), json!(ad.states[0].p.as_ref().map(|p| p.as_slice().to_vec())));
    if worst.0 > bound {
        let row = format!("node {} t={} constraint residual {:e} > {bound:e}", worst.1, ad.times[worst.1], worst.0);
        return Ok(Err(Violation { summary: summary.into(), row }));
    }
    Ok(Ok(summary.into()))
}

fn sensitivity(args: &RunArgs, k: usize, fd_eps: f64) -> Outcome {
    let r = resolve("sensitivity", args)?;
    let setup = Setup {
        dae: r.rec.index1_dae()?,
        q0: r.rec.q0.clone(),
        u_guess: r.rec.u_guess.clone(),
        tf: r.tf,
        steps: r.steps,
        tableau: r.tableau.clone(),
        newton: r.newton,
    };
    let oracles = Oracles {
        directions: random_directions(setup.q0.len(), k, args.seed),
        tangent: true,
        fd_eps: (fd_eps > 0.0).then_some(fd_eps),
        exec: Execution::default(),
    };
    let report = match args.mode {
        CostMode::Terminal => terminal_sensitivity(&setup, &TerminalCost::half_squared(), &oracles)?,
        CostMode::Running => running_sensitivity(&setup, &RunningCost::half_squares(), &oracles)?,
    };
    io::write_sensitivity(create(&r.output)?, &report)?;
    let mut summary = r.summary("sensitivity");
    summary.insert("mode".into(), json!(args.mode.label()));
    summary.insert("max_defect".into(), json!(report.max_adjoint_vs_tangent));
    summary.insert("max_adjoint_vs_fd".into(), json!(report.max_adjoint_vs_fd));
    summary.insert("cost".into(), json!(report.cost_value));
    summary.insert("p0".into(), json!(report.adjoint_p0.as_slice().to_vec()));

    let bound = 100.0 * r.newton.tol * r.steps.max(1) as f64;
    for (i, (a, t)) in report.adjoint_values.iter().zip(&report.tangent_values).enumerate() {
        if (a - t).abs() > bound {
            let row = format!("direction {i}: adjoint {a:?} tangent {t:?} gap {:e} > {bound:e}", (a - t).abs());
            return Ok(Err(Violation { summary: summary.into(), row }));
        }
    }
    Ok(Ok(summary.into()))
}

fn audit_row(r: &AuditRow) -> String {
    format!(
        "step={} t={:?} pairing={:?} defect={:e} constraint_res={:e} momentum_res={:e}",
        r.step, r.t, r.pairing, r.pairing_defect, r.constraint_residual_max, r.momentum_constraint_residual_max
    )
}

fn verify_invariants(args: &RunArgs) -> Outcome {
    let r = resolve("verify-invariants", args)?;
    let (tan, ad, adj) = run_triplet(&r, args.mode)?;
    let audit = audit_invariants(&tan, &ad, &adj, &r.tableau, None)?;
    io::write_audit(create(&r.output)?, &audit.rows)?;
    let mut summary = r.summary("verify-invariants");
    dump_stages(&r, &ad, args.dump_stages, &mut summary)?;
    summary.insert("mode".into(), json!(args.mode.label()));
    summary.insert("max_defect".into(), json!(audit.max_defect));

    // Defects may grow with the number of stage solves behind them.
    let s = r.tableau.stages() as f64;
    for row in &audit.rows {
        let bound = 50.0 * r.newton.tol * s * row.step.max(1) as f64;
        if row.pairing_defect > bound {
            return Ok(Err(Violation {
                summary: summary.into(),
                row: format!("{} > {bound:e}", audit_row(row)),
            }));
        }
    }
    Ok(Ok(summary.into()))
}

fn naturality(args: &RunArgs) -> Outcome {
    let r = resolve("naturality", args)?;
    let dae = r.rec.index1_dae()?;
    let pf = Vector::from_element(dae.dim_q, 1.0);
    let report = naturality_check(&dae, &r.rec.u_guess, &r.tableau, &r.rec.q0, &pf, r.h(), r.steps, &r.newton, Execution::default())?;
    io::write_cube(create(&r.output)?, &report)?;
    let mut summary = r.summary("naturality");
    let worst = report.max_discrepancy();
    summary.insert("max_defect".into(), json!(worst));

    let bound = (100.0 * r.newton.tol).max(1e-10);
    if let Some(p) = report.pairs.iter().find(|p| p.max_dq.max(p.max_dp) > bound) {
        let row = format!("{},{},{:e},{:e} > {bound:e}", p.path_a, p.path_b, p.max_dq, p.max_dp);
        return Ok(Err(Violation { summary: summary.into(), row }));
    }
    Ok(Ok(summary.into()))
}

fn convergence(common: &Common, hs: &[f64]) -> Outcome {
    let rec = builtin(&common.problem)?;
    let tableau = builtin_tableau(&common.tableau)?;
    let tf = horizon(common, &rec)?;
    let cfg = newton(common)?;
    let output = output_path(common, "convergence");
    let report = convergence_order(&rec, &tableau, hs, tf, &cfg, Execution::default())?;
    io::write_convergence(create(&output)?, &report.rows)?;
    let summary = json!({
        "subcommand": "convergence",
        "problem": rec.name,
        "tableau": tableau.name,
        "order": report.order_q,
        "order_p": report.order_p,
        "order_u": report.order_u,
        "expected_order": tableau.order(),
        "reliable": report.reliable,
        "reference": format!("{:?}", report.reference),
        "output": output.display().to_string(),
    });

    let expected = tableau.order().map(f64::from);
    let off = expected.is_some_and(|r| (report.order_q - r).abs() > 0.3);
    if !report.reliable || off {
        let row = format!(
            "fitted q-slope {:.4} (expected {}), reliable={}",
            report.order_q,
            expected.map_or("unknown".into(), |r| r.to_string()),
            report.reliable
        );
        return Ok(Err(Violation { summary, row }));
    }
    Ok(Ok(summary))
}

fn ocp(args: &RunArgs, p0_guess: Option<&[f64]>) -> Outcome {
    let r = resolve("ocp", args)?;
    let Problem::Ocp(problem) = &r.rec.problem else {
        bail!("'{}' is not an optimal-control problem", r.rec.name);
    };
    let mut problem = problem.clone();
    problem.tf = r.tf;
    let n = problem.q0.len();
    let guess = match p0_guess {
        Some(g) if g.len() != n => bail!("--p0-guess needs {n} values, got {}", g.len()),
        Some(g) => Vector::from_column_slice(g),
        None => Vector::zeros(n),
    };
    let cfg = ShootingConfig {
        newton: r.newton,
        ..ShootingConfig::default()
    };
    let ext = shoot_extremal(&problem, &r.tableau, r.steps, &guess, &cfg)?;
    let residual = discrete_extremality_residual(&problem, &r.tableau, &ext)?;
    io::write_trajectory(create(&r.output)?, &ext.trajectory)?;
    let mut summary = r.summary("ocp");
    dump_stages(&r, &ext.trajectory, args.dump_stages, &mut summary)?;
    summary.insert("residual".into(), json!(residual));
    summary.insert("shooting_residual".into(), json!(ext.shooting_residual));
    summary.insert("iterations".into(), json!(ext.iterations));
    summary.insert("cost".into(), json!(ext.cost));
    summary.insert("p0".into(), json!(ext.p0.as_slice().to_vec()));

    let bound = cfg.tol;
    if residual > bound {
        let row = format!("discrete extremality residual {residual:e} > {bound:e}");
        return Ok(Err(Violation { summary: summary.into(), row }));
    }
    Ok(Ok(summary.into()))
}

fn list() -> Outcome {
    println!("problems:");
    for name in builtin_names() {
        let rec = builtin(name)?;
        println!("  {name:<12} {}", rec.description);
    }
    println!("tableaus:");
    for name in builtin_tableau_names() {
        let t = builtin_tableau(name)?;
        let order = t.order().map_or("?".into(), |o| o.to_string());
        println!("  {name:<12} stages={} order={order} stiffly_accurate={}", t.stages(), t.is_stiffly_accurate());
    }
    Ok(Ok(json!({ "subcommand": "list", "problems": builtin_names(), "tableaus": builtin_tableau_names() })))
}

fn configure_threads() -> anyhow::Result<()> {
    let Ok(raw) = std::env::var("ADJOINT_GEO_THREADS") else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().with_context(|| format!("ADJOINT_GEO_THREADS must be a positive integer, got '{raw}'"))?;
    if n == 0 {
        bail!("ADJOINT_GEO_THREADS must be a positive integer, got 0");
    }
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    log::debug!("thread cap {n}");
    Ok(())
}

fn dispatch(cmd: &Command) -> Outcome {
    configure_threads()?;
    match cmd {
        Command::Integrate(a) => integrate(a),
        Command::Sensitivity { run, directions, fd_eps } => sensitivity(run, *directions, *fd_eps),
        Command::VerifyInvariants(a) => verify_invariants(a),
        Command::Naturality(a) => naturality(a),
        Command::Convergence { common, h } => convergence(common, h),
        Command::Ocp { run, p0_guess } => ocp(run, p0_guess.as_deref()),
        Command::List => list(),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(&cli.command) {
        Ok(Ok(mut summary)) => {
            summary["status"] = json!("ok");
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Ok(Err(Violation { mut summary, row })) => {
            summary["status"] = json!("violation");
            eprintln!("tolerance violation: {row}");
            println!("{summary}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
