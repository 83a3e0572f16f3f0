//! Problem definitions: vector fields, semi-explicit DAEs, Hessenberg index-2
//! DAEs, running and terminal costs.
//!
//! Everything is in flat real coordinates. All Jacobians are analytic fields of
//! the problem; finite differences only appear in [`check_jacobians_fd`].

mod registry;

use std::fmt;
use std::sync::Arc;

pub use registry::{builtin, builtin_names, ClosedForm, Problem, ProblemRecord};

use crate::{Error, Matrix, Result, Vector};

pub type Map = Arc<dyn Fn(&Vector) -> Vector + Send + Sync>;
pub type JacMap = Arc<dyn Fn(&Vector) -> Matrix + Send + Sync>;
pub type Map2 = Arc<dyn Fn(&Vector, &Vector) -> Vector + Send + Sync>;
pub type JacMap2 = Arc<dyn Fn(&Vector, &Vector) -> Matrix + Send + Sync>;
pub type Scalar1 = Arc<dyn Fn(&Vector) -> f64 + Send + Sync>;
pub type Scalar2 = Arc<dyn Fn(&Vector, &Vector) -> f64 + Send + Sync>;

/// The four partial Jacobians of a semi-explicit DAE at a point.
#[derive(Debug, Clone, PartialEq)]
pub struct Jacobians {
    pub dqf: Matrix,
    pub duf: Matrix,
    pub dqphi: Matrix,
    pub duphi: Matrix,
}

/// Common view of anything that behaves like `q̇ = f(q,u)`, `0 = φ(q,u)`.
///
/// Pure ODEs have `dim_u = dim_phi = 0`. Evaluations are fallible so that
/// models which solve for hidden variables internally (see
/// [`crate::adjoint::ReducedODE`]) can report failures.
pub trait DaeModel {
    fn dim_q(&self) -> usize;
    fn dim_u(&self) -> usize;
    fn dim_phi(&self) -> usize;
    fn f(&self, q: &Vector, u: &Vector) -> Result<Vector>;
    fn phi(&self, q: &Vector, u: &Vector) -> Result<Vector>;
    fn jacobians(&self, q: &Vector, u: &Vector) -> Result<Jacobians>;
}

fn finite_vec(v: Vector, what: &str) -> Result<Vector> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(v)
    } else {
        Err(Error::Evaluation(what.to_string()))
    }
}

fn finite_mat(m: Matrix, what: &str) -> Result<Matrix> {
    if m.iter().all(|x| x.is_finite()) {
        Ok(m)
    } else {
        Err(Error::Evaluation(what.to_string()))
    }
}

fn check_len(what: &str, v: &Vector, n: usize) -> Result<()> {
    if v.len() == n {
        Ok(())
    } else {
        Err(Error::dim(what, n, v.len()))
    }
}

fn check_shape(what: &str, m: &Matrix, rows: usize, cols: usize) -> Result<()> {
    if m.nrows() == rows && m.ncols() == cols {
        Ok(())
    } else {
        Err(Error::Dimension {
            what: format!("{what} ({rows}x{cols} expected, got {}x{})", m.nrows(), m.ncols()),
            expected: rows * cols,
            got: m.nrows() * m.ncols(),
        })
    }
}

/// Autonomous vector field `q̇ = f(q)` with its Jacobian.
#[derive(Clone)]
pub struct VectorField {
    pub dim: usize,
    pub f: Map,
    pub df: JacMap,
}

impl fmt::Debug for VectorField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("VectorField").field("dim", &self.dim).finish()
    }
}

impl VectorField {
    pub fn new(
        dim: usize,
        f: impl Fn(&Vector) -> Vector + Send + Sync + 'static,
        df: impl Fn(&Vector) -> Matrix + Send + Sync + 'static,
    ) -> Self {
        Self {
            dim,
            f: Arc::new(f),
            df: Arc::new(df),
        }
    }

    /// `q̇ = A q`.
    pub fn linear(a: Matrix) -> Self {
        assert!(a.is_square(), "linear field needs a square matrix");
        let a2 = a.clone();
        Self::new(a.nrows(), move |q| &a * q, move |_| a2.clone())
    }

    pub fn zero(dim: usize) -> Self {
        Self::new(dim, move |_| Vector::zeros(dim), move |_| Matrix::zeros(dim, dim))
    }

    pub fn eval(&self, q: &Vector) -> Result<Vector> {
        check_len("vector field state", q, self.dim)?;
        let v = finite_vec((self.f)(q), "vector field f")?;
        check_len("vector field output", &v, self.dim)?;
        Ok(v)
    }

    pub fn jacobian(&self, q: &Vector) -> Result<Matrix> {
        check_len("vector field state", q, self.dim)?;
        let m = finite_mat((self.df)(q), "vector field Df")?;
        check_shape("vector field Df", &m, self.dim, self.dim)?;
        Ok(m)
    }
}

impl DaeModel for VectorField {
    fn dim_q(&self) -> usize {
        self.dim
    }
    fn dim_u(&self) -> usize {
        0
    }
    fn dim_phi(&self) -> usize {
        0
    }
    fn f(&self, q: &Vector, _u: &Vector) -> Result<Vector> {
        self.eval(q)
    }
    fn phi(&self, _q: &Vector, _u: &Vector) -> Result<Vector> {
        Ok(Vector::zeros(0))
    }
    fn jacobians(&self, q: &Vector, _u: &Vector) -> Result<Jacobians> {
        let n = self.dim;
        Ok(Jacobians {
            dqf: self.jacobian(q)?,
            duf: Matrix::zeros(n, 0),
            dqphi: Matrix::zeros(0, n),
            duphi: Matrix::zeros(0, 0),
        })
    }
}

/// Semi-explicit DAE `q̇ = f(q,u)`, `0 = φ(q,u)` with analytic partial Jacobians.
///
/// `dim_phi` need not equal `dim_u` at construction; index-1 machinery rejects
/// non-square constraints when it runs.
#[derive(Clone)]
pub struct SemiExplicitDAE {
    pub dim_q: usize,
    pub dim_u: usize,
    pub dim_phi: usize,
    pub f: Map2,
    pub phi: Map2,
    pub dqf: JacMap2,
    pub duf: JacMap2,
    pub dqphi: JacMap2,
    pub duphi: JacMap2,
}

impl fmt::Debug for SemiExplicitDAE {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SemiExplicitDAE")
            .field("dim_q", &self.dim_q)
            .field("dim_u", &self.dim_u)
            .field("dim_phi", &self.dim_phi)
            .finish()
    }
}

impl SemiExplicitDAE {
    /// Views an ODE as a DAE with no algebraic variables.
    pub fn from_ode(vf: &VectorField) -> Self {
        let n = vf.dim;
        let (f, df) = (vf.f.clone(), vf.df.clone());
        Self {
            dim_q: n,
            dim_u: 0,
            dim_phi: 0,
            f: Arc::new(move |q, _| f(q)),
            phi: Arc::new(|_, _| Vector::zeros(0)),
            dqf: Arc::new(move |q, _| df(q)),
            duf: Arc::new(move |_, _| Matrix::zeros(n, 0)),
            dqphi: Arc::new(move |_, _| Matrix::zeros(0, n)),
            duphi: Arc::new(|_, _| Matrix::zeros(0, 0)),
        }
    }

    fn check_args(&self, q: &Vector, u: &Vector) -> Result<()> {
        check_len("DAE differential state q", q, self.dim_q)?;
        check_len("DAE algebraic state u", u, self.dim_u)
    }

    /// Errors unless the constraint block is square, as index-1 solves need.
    pub fn require_square(&self) -> Result<()> {
        if self.dim_phi == self.dim_u {
            Ok(())
        } else {
            Err(Error::Index(format!(
                "index-1 machinery needs dim(phi) = dim(u), got {} constraints for {} algebraic variables",
                self.dim_phi, self.dim_u
            )))
        }
    }
}

impl DaeModel for SemiExplicitDAE {
    fn dim_q(&self) -> usize {
        self.dim_q
    }
    fn dim_u(&self) -> usize {
        self.dim_u
    }
    fn dim_phi(&self) -> usize {
        self.dim_phi
    }
    fn f(&self, q: &Vector, u: &Vector) -> Result<Vector> {
        self.check_args(q, u)?;
        let v = finite_vec((self.f)(q, u), "DAE f")?;
        check_len("DAE f output", &v, self.dim_q)?;
        Ok(v)
    }
    fn phi(&self, q: &Vector, u: &Vector) -> Result<Vector> {
        self.check_args(q, u)?;
        let v = finite_vec((self.phi)(q, u), "DAE phi")?;
        check_len("DAE phi output", &v, self.dim_phi)?;
        Ok(v)
    }
    fn jacobians(&self, q: &Vector, u: &Vector) -> Result<Jacobians> {
        self.check_args(q, u)?;
        let (nd, na, m) = (self.dim_q, self.dim_u, self.dim_phi);
        let dqf = finite_mat((self.dqf)(q, u), "DAE Dqf")?;
        let duf = finite_mat((self.duf)(q, u), "DAE Duf")?;
        let dqphi = finite_mat((self.dqphi)(q, u), "DAE Dqphi")?;
        let duphi = finite_mat((self.duphi)(q, u), "DAE Duphi")?;
        check_shape("Dqf", &dqf, nd, nd)?;
        check_shape("Duf", &duf, nd, na)?;
        check_shape("Dqphi", &dqphi, m, nd)?;
        check_shape("Duphi", &duphi, m, na)?;
        Ok(Jacobians { dqf, duf, dqphi, duphi })
    }
}

/// Hessenberg index-2 DAE `q̇ = f(q,u)`, `0 = g(q)`.
#[derive(Clone)]
pub struct HessenbergDAE {
    pub dim_q: usize,
    pub dim_u: usize,
    pub f: Map2,
    pub dqf: JacMap2,
    pub duf: JacMap2,
    pub g: Map,
    pub dg: JacMap,
    /// `hg_apply(q, v)` is the `dim_u × dim_q` matrix `∂/∂q [Dg(q) v]` with `v` held fixed.
    pub hg_apply: JacMap2,
}

impl fmt::Debug for HessenbergDAE {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HessenbergDAE")
            .field("dim_q", &self.dim_q)
            .field("dim_u", &self.dim_u)
            .finish()
    }
}

/// Running cost `L(q,u)` with gradients. For ODE problems `u` is empty.
#[derive(Clone)]
pub struct RunningCost {
    pub value: Scalar2,
    pub grad_q: Map2,
    pub grad_u: Map2,
}

impl fmt::Debug for RunningCost {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("RunningCost")
    }
}

impl RunningCost {
    pub fn new(
        value: impl Fn(&Vector, &Vector) -> f64 + Send + Sync + 'static,
        grad_q: impl Fn(&Vector, &Vector) -> Vector + Send + Sync + 'static,
        grad_u: impl Fn(&Vector, &Vector) -> Vector + Send + Sync + 'static,
    ) -> Self {
        Self {
            value: Arc::new(value),
            grad_q: Arc::new(grad_q),
            grad_u: Arc::new(grad_u),
        }
    }

    /// `L = ½(‖q‖² + ‖u‖²)`.
    pub fn half_squares() -> Self {
        Self::new(
            |q, u| 0.5 * (q.norm_squared() + u.norm_squared()),
            |q, _| q.clone(),
            |_, u| u.clone(),
        )
    }

    /// `L = ½‖q‖²`.
    pub fn half_q_squared() -> Self {
        Self::new(|q, _| 0.5 * q.norm_squared(), |q, _| q.clone(), |_, u| Vector::zeros(u.len()))
    }

    pub fn zero() -> Self {
        Self::new(|_, _| 0.0, |q, _| Vector::zeros(q.len()), |_, u| Vector::zeros(u.len()))
    }

    pub fn value(&self, q: &Vector, u: &Vector) -> Result<f64> {
        let v = (self.value)(q, u);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Evaluation("running cost L".into()))
        }
    }

    pub fn gradients(&self, q: &Vector, u: &Vector) -> Result<(Vector, Vector)> {
        let gq = finite_vec((self.grad_q)(q, u), "running cost grad_q")?;
        let gu = finite_vec((self.grad_u)(q, u), "running cost grad_u")?;
        check_len("running cost grad_q", &gq, q.len())?;
        check_len("running cost grad_u", &gu, u.len())?;
        Ok((gq, gu))
    }
}

/// Terminal cost `C(q)` with gradient.
#[derive(Clone)]
pub struct TerminalCost {
    pub value: Scalar1,
    pub grad: Map,
}

impl fmt::Debug for TerminalCost {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("TerminalCost")
    }
}

impl TerminalCost {
    pub fn new(
        value: impl Fn(&Vector) -> f64 + Send + Sync + 'static,
        grad: impl Fn(&Vector) -> Vector + Send + Sync + 'static,
    ) -> Self {
        Self {
            value: Arc::new(value),
            grad: Arc::new(grad),
        }
    }

    /// `C(q) = ⟨w, q⟩`.
    pub fn linear(weights: Vector) -> Self {
        let w = weights.clone();
        Self::new(move |q| weights.dot(q), move |_| w.clone())
    }

    /// `C(q) = ½‖q‖²`.
    pub fn half_squared() -> Self {
        Self::new(|q| 0.5 * q.norm_squared(), |q| q.clone())
    }

    pub fn constant(c: f64) -> Self {
        Self::new(move |_| c, |q| Vector::zeros(q.len()))
    }

    pub fn value(&self, q: &Vector) -> Result<f64> {
        let v = (self.value)(q);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Evaluation("terminal cost C".into()))
        }
    }

    pub fn gradient(&self, q: &Vector) -> Result<Vector> {
        let g = finite_vec((self.grad)(q), "terminal cost gradient")?;
        check_len("terminal cost gradient", &g, q.len())?;
        Ok(g)
    }
}

/// Returns `(f(q,u), φ(q,u))`.
pub fn eval_dae<M: DaeModel + ?Sized>(dae: &M, q: &Vector, u: &Vector) -> Result<(Vector, Vector)> {
    check_len("q", q, dae.dim_q())?;
    check_len("u", u, dae.dim_u())?;
    Ok((dae.f(q, u)?, dae.phi(q, u)?))
}

pub fn eval_jacobians<M: DaeModel + ?Sized>(dae: &M, q: &Vector, u: &Vector) -> Result<Jacobians> {
    check_len("q", q, dae.dim_q())?;
    check_len("u", u, dae.dim_u())?;
    dae.jacobians(q, u)
}

/// Worst entrywise error of each analytic Jacobian block against central
/// differences, relative to `max(1, |entry|)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JacobianCheck {
    pub dqf: f64,
    pub duf: f64,
    pub dqphi: f64,
    pub duphi: f64,
}

impl JacobianCheck {
    pub fn max(&self) -> f64 {
        self.dqf.max(self.duf).max(self.dqphi).max(self.duphi)
    }
}

fn block_error(analytic: &Matrix, fd: &Matrix) -> f64 {
    analytic
        .iter()
        .zip(fd.iter())
        .map(|(a, b)| (a - b).abs() / a.abs().max(1.0))
        .fold(0.0, f64::max)
}

fn central_columns<F>(x: &Vector, rows: usize, eps: f64, eval: F) -> Result<Matrix>
where
    F: Fn(&Vector) -> Result<Vector>,
{
    let mut m = Matrix::zeros(rows, x.len());
    for j in 0..x.len() {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[j] += eps;
        xm[j] -= eps;
        let col = (eval(&xp)? - eval(&xm)?) / (2.0 * eps);
        m.set_column(j, &col);
    }
    Ok(m)
}

pub fn check_jacobians_fd<M: DaeModel + ?Sized>(dae: &M, q: &Vector, u: &Vector, eps: f64) -> Result<JacobianCheck> {
    if !(eps > 0.0) {
        return Err(Error::Input(format!("finite-difference eps must be > 0, got {eps}")));
    }
    let jac = eval_jacobians(dae, q, u)?;
    let (nd, m) = (dae.dim_q(), dae.dim_phi());
    let fd_dqf = central_columns(q, nd, eps, |x| dae.f(x, u))?;
    let fd_duf = central_columns(u, nd, eps, |x| dae.f(q, x))?;
    let fd_dqphi = central_columns(q, m, eps, |x| dae.phi(x, u))?;
    let fd_duphi = central_columns(u, m, eps, |x| dae.phi(q, x))?;
    Ok(JacobianCheck {
        dqf: block_error(&jac.dqf, &fd_dqf),
        duf: block_error(&jac.duf, &fd_duf),
        dqphi: block_error(&jac.dqphi, &fd_dqphi),
        duphi: block_error(&jac.duphi, &fd_duphi),
    })
}

/// Central-difference gradient check for a running cost.
pub fn check_running_cost_fd(cost: &RunningCost, q: &Vector, u: &Vector, eps: f64) -> Result<f64> {
    let (gq, gu) = cost.gradients(q, u)?;
    let one = |x: &Vector| -> Result<Vector> { Ok(Vector::from_element(1, cost.value(x, u)?)) };
    let fd_q = central_columns(q, 1, eps, one)?;
    let fd_u = central_columns(u, 1, eps, |x| Ok(Vector::from_element(1, cost.value(q, x)?)))?;
    Ok(block_error(&Matrix::from_row_slice(1, gq.len(), gq.as_slice()), &fd_q)
        .max(block_error(&Matrix::from_row_slice(1, gu.len(), gu.as_slice()), &fd_u)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dmatrix, dvector};

    fn registry_dae(name: &str) -> SemiExplicitDAE {
        builtin(name).unwrap().index1_dae().unwrap()
    }

    #[test]
    fn eval_dae_examples() {
        let exp = registry_dae("exp-dae");
        let (f, phi) = eval_dae(&exp, &dvector![1.0], &dvector![1.0]).unwrap();
        assert_eq!((f[0], phi[0]), (1.0, 0.0));

        let nl = registry_dae("nl-dae");
        let (f, phi) = eval_dae(&nl, &dvector![2.0], &dvector![4.0]).unwrap();
        assert_eq!((f[0], phi[0]), (2.0, 0.0));
        let (f, phi) = eval_dae(&nl, &dvector![1.0], &dvector![0.0]).unwrap();
        assert_eq!((f[0], phi[0]), (-1.0, -1.0));
    }

    #[test]
    fn eval_dae_dimension_mismatch() {
        let nl = registry_dae("nl-dae");
        assert!(matches!(eval_dae(&nl, &dvector![1.0, 2.0], &dvector![0.0]), Err(Error::Dimension { .. })));
        assert!(matches!(eval_jacobians(&nl, &dvector![1.0], &dvector![]), Err(Error::Dimension { .. })));
    }

    #[test]
    fn jacobian_examples() {
        let exp = registry_dae("exp-dae");
        let j = eval_jacobians(&exp, &dvector![0.3], &dvector![-2.0]).unwrap();
        assert_eq!(
            (j.dqf[(0, 0)], j.duf[(0, 0)], j.dqphi[(0, 0)], j.duphi[(0, 0)]),
            (0.0, 1.0, -1.0, 1.0)
        );

        let nl = registry_dae("nl-dae");
        let j = eval_jacobians(&nl, &dvector![2.0], &dvector![4.0]).unwrap();
        assert_eq!(j.dqphi[(0, 0)], -4.0);
        assert_eq!(j.duphi[(0, 0)], 1.0);

        let lin = registry_dae("linear-ode");
        let j = eval_jacobians(&lin, &dvector![0.2, 0.7], &dvector![]).unwrap();
        assert_eq!(j.dqf, dmatrix![0.0, 1.0; -1.0, 0.0]);
        assert_eq!((j.duf.ncols(), j.dqphi.nrows(), j.duphi.len()), (0, 0, 0));
    }

    #[test]
    fn fd_check_examples() {
        let exp = registry_dae("exp-dae");
        let c = check_jacobians_fd(&exp, &dvector![0.4], &dvector![0.9], 1e-6).unwrap();
        assert!(c.max() <= 1e-8, "{c:?}");

        let nl = registry_dae("nl-dae");
        let c = check_jacobians_fd(&nl, &dvector![0.7], &dvector![0.2], 1e-6).unwrap();
        assert!(c.dqphi <= 1e-7, "{c:?}");

        let mut wrong = registry_dae("nl-dae");
        wrong.dqphi = Arc::new(|q, _| Matrix::from_element(1, 1, -q[0]));
        let c = check_jacobians_fd(&wrong, &dvector![0.7], &dvector![0.2], 1e-6).unwrap();
        assert!(c.dqphi >= 1e-2, "{c:?}");

        assert!(matches!(check_jacobians_fd(&nl, &dvector![0.7], &dvector![0.2], 0.0), Err(Error::Input(_))));
    }

    #[test]
    fn nan_is_an_evaluation_error() {
        let bad = VectorField::new(1, |q| dvector![q[0].ln()], |q| dmatrix![1.0 / q[0]]);
        assert!(matches!(bad.eval(&dvector![-1.0]), Err(Error::Evaluation(_))));
        assert!(matches!(check_jacobians_fd(&bad, &dvector![-1.0], &dvector![], 1e-6), Err(Error::Evaluation(_))));
    }

    #[test]
    fn non_square_constraint_is_accepted_then_rejected() {
        let mut dae = registry_dae("nl-dae");
        dae.dim_phi = 0;
        dae.phi = Arc::new(|_, _| Vector::zeros(0));
        assert!(dae.require_square().is_err());
        assert!(registry_dae("nl-dae").require_square().is_ok());
    }
}
