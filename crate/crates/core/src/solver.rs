//! Damped Newton iteration and dense LU solves.
//!
//! All systems in this crate are small (at most `s·(n_d + n_a)` unknowns for
//! stage equations, a few more for momentum systems), so a dense LU with partial
//! pivoting is used throughout. Convergence is measured in the infinity norm.

use nalgebra::LU;

use crate::{Error, Matrix, Result, Vector};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonConfig {
    /// Infinity-norm residual threshold.
    pub tol: f64,
    pub max_iter: usize,
    /// Backtracking factor in (0, 1).
    pub damping: f64,
    /// Smallest step multiplier tried before giving up on an iterate.
    pub min_step: f64,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            max_iter: 50,
            damping: 0.5,
            min_step: 1e-4,
        }
    }
}

impl NewtonConfig {
    pub fn with_tol(tol: f64) -> Self {
        Self {
            tol,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::Input(format!("Newton tol must be > 0, got {}", self.tol)));
        }
        if !(self.damping > 0.0 && self.damping < 1.0) {
            return Err(Error::Input(format!(
                "Newton damping must lie in (0, 1), got {}",
                self.damping
            )));
        }
        if !(self.min_step > 0.0 && self.min_step <= 1.0) {
            return Err(Error::Input(format!(
                "Newton min_step must lie in (0, 1], got {}",
                self.min_step
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct NewtonResult {
    pub x: Vector,
    pub residual_norm: f64,
    /// Number of accepted steps.
    pub iterations: usize,
    pub converged: bool,
    /// Residual norm after each accepted step, starting with the initial guess.
    pub history: Vec<f64>,
}

pub fn inf_norm(v: &Vector) -> f64 {
    v.iter().fold(0.0_f64, |m, x| if x.is_nan() { f64::NAN } else { m.max(x.abs()) })
}

fn finite_norm(v: &Vector) -> f64 {
    let n = inf_norm(v);
    if n.is_finite() {
        n
    } else {
        f64::INFINITY
    }
}

/// Dense LU factorisation that refuses numerically singular matrices.
pub struct DenseLu {
    lu: LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

impl DenseLu {
    /// Returns `None` when a pivot is zero or negligible relative to the
    /// largest entry of the matrix.
    pub fn new(m: Matrix) -> Option<Self> {
        if m.nrows() != m.ncols() {
            return None;
        }
        let n = m.nrows();
        if n == 0 {
            return Some(Self { lu: LU::new(m) });
        }
        let scale = m.amax();
        if !scale.is_finite() || scale == 0.0 {
            return None;
        }
        let lu = LU::new(m);
        let min_pivot = lu.u().diagonal().amin();
        if min_pivot <= scale * f64::EPSILON * (n as f64) {
            return None;
        }
        Some(Self { lu })
    }

    pub fn solve(&self, b: &Vector) -> Vector {
        if b.is_empty() {
            return b.clone();
        }
        self.lu.solve(b).expect("factorisation checked nonsingular")
    }

    /// Solves `Aᵀ x = b`.
    pub fn solve_transpose(&self, b: &Vector) -> Vector {
        if b.is_empty() {
            return b.clone();
        }
        let mut x = b.clone();
        // Aᵀ = (P⁻¹LU)ᵀ = Uᵀ Lᵀ P, so solve Uᵀ y = b, Lᵀ z = y, then x = Pᵀ z.
        let u = self.lu.u();
        let l = self.lu.l();
        assert!(u.tr_solve_upper_triangular_mut(&mut x));
        assert!(l.tr_solve_lower_triangular_mut(&mut x));
        self.lu.p().inv_permute_rows(&mut x);
        x
    }
}

/// Solves `m x = b`, mapping singularity to [`Error::Singular`].
pub fn solve_dense(m: Matrix, b: &Vector, context: &str) -> Result<Vector> {
    DenseLu::new(m)
        .map(|lu| lu.solve(b))
        .ok_or_else(|| Error::Singular {
            context: context.to_string(),
            iterate: 0,
        })
}

/// Central-difference Jacobian of `residual` at `x` with steps
/// `rel_step·max(1, |x_j|)`.
pub fn fd_jacobian<R>(residual: R, x: &Vector, rel_step: f64) -> Result<Matrix>
where
    R: Fn(&Vector) -> Result<Vector>,
{
    if !(rel_step > 0.0) {
        return Err(Error::Input(format!("finite-difference step must be > 0, got {rel_step}")));
    }
    let mut cols = Vec::with_capacity(x.len());
    for j in 0..x.len() {
        let e = rel_step * x[j].abs().max(1.0);
        let mut xp = x.clone();
        xp[j] += e;
        let mut xm = x.clone();
        xm[j] -= e;
        cols.push((residual(&xp)? - residual(&xm)?) / (2.0 * e));
    }
    let rows = residual(x)?.len();
    let mut m = Matrix::zeros(rows, x.len());
    for (j, c) in cols.iter().enumerate() {
        if c.len() != rows {
            return Err(Error::dim("finite-difference column", rows, c.len()));
        }
        m.set_column(j, c);
    }
    Ok(m)
}

/// Damped Newton iteration for `residual(x) = 0`.
///
/// Non-convergence is reported through `converged = false` with the best
/// iterate; only a singular Jacobian is an error. Each accepted step strictly
/// decreases the infinity norm of the residual.
pub fn newton_solve<R, J>(residual: R, jacobian: J, x0: &Vector, cfg: &NewtonConfig) -> Result<NewtonResult>
where
    R: Fn(&Vector) -> Result<Vector>,
    J: Fn(&Vector) -> Result<Matrix>,
{
    cfg.validate()?;
    let mut x = x0.clone();
    let mut r = residual(&x)?;
    if r.len() != x.len() {
        return Err(Error::dim("Newton residual", x.len(), r.len()));
    }
    let mut norm = finite_norm(&r);
    let mut history = vec![norm];
    let mut iterations = 0;

    while norm > cfg.tol && iterations < cfg.max_iter {
        let jac = jacobian(&x)?;
        if jac.nrows() != x.len() || jac.ncols() != x.len() {
            return Err(Error::dim("Newton Jacobian", x.len(), jac.nrows().max(jac.ncols())));
        }
        let lu = DenseLu::new(jac).ok_or_else(|| Error::Singular {
            context: "Newton Jacobian".into(),
            iterate: iterations,
        })?;
        let dx = lu.solve(&r);

        let mut alpha = 1.0;
        let mut accepted = None;
        while alpha >= cfg.min_step {
            let trial = &x - &dx * alpha;
            // Evaluation failures on a trial point are treated as no decrease.
            if let Ok(r_trial) = residual(&trial) {
                let n_trial = finite_norm(&r_trial);
                if n_trial < norm {
                    accepted = Some((trial, r_trial, n_trial));
                    break;
                }
            }
            alpha *= cfg.damping;
        }
        match accepted {
            Some((xt, rt, nt)) => {
                x = xt;
                r = rt;
                norm = nt;
                iterations += 1;
                history.push(norm);
            }
            None => break,
        }
    }

    Ok(NewtonResult {
        converged: norm <= cfg.tol,
        x,
        residual_norm: norm,
        iterations,
        history,
    })
}
