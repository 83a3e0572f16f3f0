//! Butcher tableaus and the symplectic-adjoint coefficient transform.
//!
//! Coefficients are stored as double-precision literals. For the stiffly
//! accurate Radau IIA methods the last row of `a` repeats the literals of `b`,
//! so the last stage and the `b`-weighted update agree bit for bit.

use crate::{Error, Matrix, Result, Vector};

#[derive(Debug, Clone, PartialEq)]
pub struct Tableau {
    pub name: String,
    pub a: Matrix,
    pub b: Vector,
    pub c: Vector,
}

/// Momentum coefficients `ã_ij = (b_i b_j − b_j a_ji) / b_i` paired with a tableau.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjointTableau {
    pub a_tilde: Matrix,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TableauDiagnostics {
    pub b_positive: bool,
    pub row_sum_err: f64,
    pub has_cs_eq_1: bool,
}

impl Tableau {
    pub fn new(name: impl Into<String>, a: Matrix, b: Vector, c: Vector) -> Result<Self> {
        let s = b.len();
        if a.nrows() != s || a.ncols() != s || c.len() != s || s == 0 {
            return Err(Error::Tableau(format!(
                "inconsistent stage counts: a is {}x{}, b has {}, c has {}",
                a.nrows(),
                a.ncols(),
                s,
                c.len()
            )));
        }
        Ok(Self {
            name: name.into(),
            a,
            b,
            c,
        })
    }

    pub fn stages(&self) -> usize {
        self.b.len()
    }

    /// `c_s = 1` and `a_sj = b_j`: the last stage is the step endpoint.
    pub fn is_stiffly_accurate(&self) -> bool {
        let s = self.stages();
        (self.c[s - 1] - 1.0).abs() <= 1e-14 && (0..s).all(|j| self.a[(s - 1, j)] == self.b[j])
    }

    /// Classical order of the method on ODEs.
    pub fn order(&self) -> Option<u32> {
        match self.name.as_str() {
            "midpoint" => Some(2),
            "gauss2" => Some(4),
            "gauss3" => Some(6),
            "radauIIA2" => Some(3),
            "radauIIA3" => Some(5),
            "euler-explicit" => Some(1),
            _ => None,
        }
    }
}

pub fn symplectic_adjoint(t: &Tableau) -> Result<AdjointTableau> {
    if let Some((i, bi)) = t.b.iter().enumerate().find(|(_, b)| !(**b > 0.0)) {
        return Err(Error::Tableau(format!(
            "symplectic adjoint needs positive weights, b[{i}] = {bi}"
        )));
    }
    let s = t.stages();
    let a_tilde = Matrix::from_fn(s, s, |i, j| (t.b[i] * t.b[j] - t.b[j] * t.a[(j, i)]) / t.b[i]);
    Ok(AdjointTableau { a_tilde })
}

pub fn validate(t: &Tableau) -> TableauDiagnostics {
    let s = t.stages();
    let row_sum_err = (0..s)
        .map(|i| (t.c[i] - t.a.row(i).sum()).abs())
        .fold(0.0, f64::max);
    TableauDiagnostics {
        b_positive: t.b.iter().all(|b| *b > 0.0),
        row_sum_err,
        has_cs_eq_1: (t.c[s - 1] - 1.0).abs() <= 1e-14,
    }
}

const NAMES: [&str; 6] = ["midpoint", "gauss2", "gauss3", "radauIIA2", "radauIIA3", "euler-explicit"];

pub fn builtin_tableau_names() -> Vec<&'static str> {
    NAMES.to_vec()
}

fn make(name: &str, s: usize, a: &[f64], b: &[f64], c: &[f64]) -> Tableau {
    Tableau {
        name: name.to_string(),
        a: Matrix::from_row_slice(s, s, a),
        b: Vector::from_row_slice(b),
        c: Vector::from_row_slice(c),
    }
}

pub fn builtin_tableau(name: &str) -> Result<Tableau> {
    let t = match name {
        "midpoint" => make(name, 1, &[0.5], &[1.0], &[0.5]),
        "euler-explicit" => make(name, 1, &[0.0], &[1.0], &[0.0]),
        "gauss2" => make(
            name,
            2,
            &[0.25, -0.03867513459481288, 0.5386751345948129, 0.25],
            &[0.5, 0.5],
            &[0.2113248654051871, 0.7886751345948129],
        ),
        "gauss3" => make(
            name,
            3,
            &[
                0.1388888888888889,
                -0.0359766675249389,
                0.009789444015308325,
                0.30026319498086457,
                0.2222222222222222,
                -0.022485417203086815,
                0.26798833376246944,
                0.48042111196938336,
                0.1388888888888889,
            ],
            &[0.2777777777777778, 0.4444444444444444, 0.2777777777777778],
            &[0.11270166537925831, 0.5, 0.8872983346207417],
        ),
        "radauIIA2" => make(
            name,
            2,
            &[0.4166666666666667, -0.08333333333333333, 0.75, 0.25],
            &[0.75, 0.25],
            &[0.3333333333333333, 1.0],
        ),
        "radauIIA3" => make(
            name,
            3,
            &[
                0.1968154772236604,
                -0.06553542585019839,
                0.02377097434822015,
                0.3944243147390873,
                0.2920734116652285,
                -0.04154875212599793,
                0.37640306270046725,
                0.5124858261884216,
                0.1111111111111111,
            ],
            &[0.37640306270046725, 0.5124858261884216, 0.1111111111111111],
            &[0.1550510257216822, 0.6449489742783178, 1.0],
        ),
        _ => {
            return Err(Error::Lookup {
                kind: "tableau",
                name: name.to_string(),
                available: NAMES.iter().map(|s| s.to_string()).collect(),
            })
        }
    };
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::{dmatrix, dvector};

    fn all() -> Vec<Tableau> {
        NAMES.iter().map(|n| builtin_tableau(n).unwrap()).collect()
    }

    #[test]
    fn adjoint_of_midpoint_and_euler() {
        let mid = symplectic_adjoint(&builtin_tableau("midpoint").unwrap()).unwrap();
        assert_eq!(mid.a_tilde, dmatrix![0.5]);
        let eul = symplectic_adjoint(&builtin_tableau("euler-explicit").unwrap()).unwrap();
        assert_eq!(eul.a_tilde, dmatrix![1.0]);
    }

    #[test]
    fn gauss_is_self_adjoint() {
        for name in ["gauss2", "gauss3", "midpoint"] {
            let t = builtin_tableau(name).unwrap();
            let at = symplectic_adjoint(&t).unwrap();
            assert!((at.a_tilde - &t.a).amax() <= 1e-15, "{name}");
        }
    }

    #[test]
    fn radau2_adjoint_by_hand() {
        // b = (3/4, 1/4), a = [[5/12, -1/12], [3/4, 1/4]]:
        // ã11 = b1 - a11 = 1/3, ã12 = b2 (b1 - a21)/b1 = 0,
        // ã21 = b1 (b2 - a12)/b2 = 1, ã22 = b2 - a22 = 0.
        let at = symplectic_adjoint(&builtin_tableau("radauIIA2").unwrap()).unwrap();
        let expected = dmatrix![1.0 / 3.0, 0.0; 1.0, 0.0];
        assert!((at.a_tilde - expected).amax() <= 1e-15);
    }

    #[test]
    fn nonpositive_weights_are_rejected() {
        let t = Tableau::new("bad", Matrix::zeros(2, 2), dvector![-1.0, 2.0], dvector![0.0, 0.0]).unwrap();
        assert!(matches!(symplectic_adjoint(&t), Err(Error::Tableau(_))));
        let d = validate(&t);
        assert!(!d.b_positive);
    }

    #[test]
    fn diagnostics() {
        let r = validate(&builtin_tableau("radauIIA2").unwrap());
        assert!(r.b_positive && r.has_cs_eq_1 && r.row_sum_err <= 1e-15, "{r:?}");
        let g = validate(&builtin_tableau("gauss2").unwrap());
        assert!(g.b_positive && !g.has_cs_eq_1 && g.row_sum_err <= 1e-15, "{g:?}");
    }

    #[test]
    fn builtin_lookup() {
        let m = builtin_tableau("midpoint").unwrap();
        assert_eq!((m.stages(), m.a[(0, 0)], m.b[0], m.c[0]), (1, 0.5, 1.0, 0.5));
        let r = builtin_tableau("radauIIA2").unwrap();
        assert_eq!(r.c, dvector![1.0 / 3.0, 1.0]);
        assert_eq!(r.b, dvector![0.75, 0.25]);
        assert_abs_diff_eq!(r.b.sum(), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(r.b.dot(&r.c), 0.5, epsilon = 1e-15);
        assert!(matches!(builtin_tableau("nope"), Err(Error::Lookup { .. })));
    }

    #[test]
    fn order_conditions_hold() {
        // Σ b c^(k-1) = 1/k for k up to the quadrature order of each rule.
        for (name, k_max) in [("midpoint", 2), ("gauss2", 4), ("gauss3", 6), ("radauIIA2", 3), ("radauIIA3", 5)] {
            let t = builtin_tableau(name).unwrap();
            for k in 1..=k_max {
                let q: f64 = (0..t.stages()).map(|i| t.b[i] * t.c[i].powi(k - 1)).sum();
                assert_abs_diff_eq!(q, 1.0 / k as f64, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn row_sums_and_stiff_accuracy() {
        for t in all() {
            assert!(validate(&t).row_sum_err <= 1e-14, "{}", t.name);
        }
        assert!(builtin_tableau("radauIIA2").unwrap().is_stiffly_accurate());
        assert!(builtin_tableau("radauIIA3").unwrap().is_stiffly_accurate());
        assert!(!builtin_tableau("gauss2").unwrap().is_stiffly_accurate());
    }

    #[test]
    fn transform_is_an_involution() {
        for t in all() {
            let once = symplectic_adjoint(&t).unwrap();
            let twice = symplectic_adjoint(&Tableau {
                a: once.a_tilde,
                ..t.clone()
            })
            .unwrap();
            assert!((twice.a_tilde - &t.a).amax() <= 1e-14, "{}", t.name);
        }
    }

    #[test]
    fn symplecticity_condition() {
        for t in all() {
            let at = symplectic_adjoint(&t).unwrap().a_tilde;
            let s = t.stages();
            for i in 0..s {
                for j in 0..s {
                    let r = t.b[i] * at[(i, j)] + t.b[j] * t.a[(j, i)] - t.b[i] * t.b[j];
                    assert!(r.abs() <= 1e-14, "{} ({i},{j}): {r}", t.name);
                }
            }
        }
    }
}
