//! Problem data: drift and kernel fields, costs and the full instance.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::MovingSet;

/// A map `(c, x) ↦ f(c, x) ∈ ℝⁿ` with Jacobians in both arguments. The
/// control argument `c` is `a` for the drift and `b` for the kernel.
pub trait VectorField: Send + Sync {
    fn eval(&self, c: &DVector<f64>, x: &DVector<f64>) -> DVector<f64>;
    fn jac_x(&self, c: &DVector<f64>, x: &DVector<f64>) -> DMatrix<f64>;
    fn jac_c(&self, c: &DVector<f64>, x: &DVector<f64>) -> DMatrix<f64>;
}

/// `f(c, x) = B c + A x + offset`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearField {
    pub control: DMatrix<f64>,
    pub state: DMatrix<f64>,
    pub offset: DVector<f64>,
}

impl LinearField {
    pub fn new(control: DMatrix<f64>, state: DMatrix<f64>) -> Self {
        let n = state.nrows();
        Self { control, state, offset: DVector::zeros(n) }
    }

    /// Field with no control argument.
    pub fn state_only(state: DMatrix<f64>) -> Self {
        let n = state.nrows();
        Self::new(DMatrix::zeros(n, 0), state)
    }

    /// Field that ignores the state.
    pub fn control_only(control: DMatrix<f64>) -> Self {
        let n = control.nrows();
        Self::new(control, DMatrix::zeros(n, n))
    }
}

impl VectorField for LinearField {
    fn eval(&self, c: &DVector<f64>, x: &DVector<f64>) -> DVector<f64> {
        &self.control * c + &self.state * x + &self.offset
    }
    fn jac_x(&self, _c: &DVector<f64>, _x: &DVector<f64>) -> DMatrix<f64> {
        self.state.clone()
    }
    fn jac_c(&self, _c: &DVector<f64>, _x: &DVector<f64>) -> DMatrix<f64> {
        self.control.clone()
    }
}

/// `½ (x − target)ᵀ W (x − target)`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticCost {
    pub weight: DMatrix<f64>,
    pub target: DVector<f64>,
}

impl QuadraticCost {
    pub fn new(weight: DMatrix<f64>, target: DVector<f64>) -> Self {
        let w = (&weight + weight.transpose()) * 0.5;
        Self { weight: w, target }
    }

    pub fn zero(dim: usize) -> Self {
        Self::new(DMatrix::zeros(dim, dim), DVector::zeros(dim))
    }

    /// `½ Σ w_i (x_i − c_i)²`.
    pub fn diagonal(weights: &[f64], target: DVector<f64>) -> Self {
        Self::new(DMatrix::from_diagonal(&DVector::from_column_slice(weights)), target)
    }

    pub fn dim(&self) -> usize {
        self.target.len()
    }

    pub fn value(&self, x: &DVector<f64>) -> f64 {
        let r = x - &self.target;
        0.5 * r.dot(&(&self.weight * &r))
    }

    pub fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.weight * (x - &self.target)
    }

    pub fn is_zero(&self) -> bool {
        self.weight.iter().all(|&w| w == 0.0)
    }
}

/// Gradients of the running cost at one interval.
#[derive(Debug, Clone, PartialEq)]
pub struct CostGradient {
    pub wx: DVector<f64>,
    pub wu: DVector<f64>,
    pub wa: DVector<f64>,
    pub wb: DVector<f64>,
    pub vx: DVector<f64>,
    pub vu: DVector<f64>,
    pub va: DVector<f64>,
    pub vb: DVector<f64>,
}

/// `l = l₁(z, ẋ) + l₂(u̇) + l₃(ȧ) + l₄(ḃ)` with quadratic pieces; `l₁` is a
/// quadratic in the stacked `(x, u, a, b)` plus a quadratic in `ẋ`.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningCost {
    pub state: Option<QuadraticCost>,
    pub x_rate: Option<QuadraticCost>,
    pub u_rate: Option<QuadraticCost>,
    pub a_rate: Option<QuadraticCost>,
    pub b_rate: Option<QuadraticCost>,
}

impl RunningCost {
    pub fn zero() -> Self {
        Self { state: None, x_rate: None, u_rate: None, a_rate: None, b_rate: None }
    }

    fn stack(parts: [&DVector<f64>; 4]) -> DVector<f64> {
        let len = parts.iter().map(|p| p.len()).sum();
        let mut out = DVector::zeros(len);
        let mut off = 0;
        for p in parts {
            out.rows_mut(off, p.len()).copy_from(p);
            off += p.len();
        }
        out
    }

    #[allow(clippy::too_many_arguments)]
    pub fn value(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        a: &DVector<f64>,
        b: &DVector<f64>,
        xd: &DVector<f64>,
        ud: &DVector<f64>,
        ad: &DVector<f64>,
        bd: &DVector<f64>,
    ) -> f64 {
        let mut v = 0.0;
        if let Some(q) = &self.state {
            v += q.value(&Self::stack([x, u, a, b]));
        }
        for (q, r) in [(&self.x_rate, xd), (&self.u_rate, ud), (&self.a_rate, ad), (&self.b_rate, bd)] {
            if let Some(q) = q {
                v += q.value(r);
            }
        }
        v
    }

    #[allow(clippy::too_many_arguments)]
    pub fn gradient(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        a: &DVector<f64>,
        b: &DVector<f64>,
        xd: &DVector<f64>,
        ud: &DVector<f64>,
        ad: &DVector<f64>,
        bd: &DVector<f64>,
    ) -> CostGradient {
        let (n, m, d) = (x.len(), a.len(), b.len());
        let mut g = CostGradient {
            wx: DVector::zeros(n),
            wu: DVector::zeros(n),
            wa: DVector::zeros(m),
            wb: DVector::zeros(d),
            vx: DVector::zeros(n),
            vu: DVector::zeros(n),
            va: DVector::zeros(m),
            vb: DVector::zeros(d),
        };
        if let Some(q) = &self.state {
            let s = q.gradient(&Self::stack([x, u, a, b]));
            g.wx = s.rows(0, n).into_owned();
            g.wu = s.rows(n, n).into_owned();
            g.wa = s.rows(2 * n, m).into_owned();
            g.wb = s.rows(2 * n + m, d).into_owned();
        }
        if let Some(q) = &self.x_rate {
            g.vx = q.gradient(xd);
        }
        if let Some(q) = &self.u_rate {
            g.vu = q.gradient(ud);
        }
        if let Some(q) = &self.a_rate {
            g.va = q.gradient(ad);
        }
        if let Some(q) = &self.b_rate {
            g.vb = q.gradient(bd);
        }
        g
    }
}

/// Growth and Lipschitz constants of the drift and kernel.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GrowthConstants {
    pub l: f64,
    pub l1: f64,
    pub l2: f64,
    pub alpha1: f64,
    pub alpha2: f64,
}

/// Which of `(u, a, b)` are optimization variables. Components that are not
/// controlled follow prescribed data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ControlMask {
    pub u: bool,
    pub a: bool,
    pub b: bool,
}

impl Default for ControlMask {
    fn default() -> Self {
        Self { u: true, a: true, b: true }
    }
}

/// A complete optimal control instance.
#[derive(Clone)]
pub struct ProblemSpec {
    pub set: MovingSet,
    pub n: usize,
    pub m: usize,
    pub d: usize,
    pub f1: Arc<dyn VectorField>,
    pub f2: Arc<dyn VectorField>,
    pub growth: GrowthConstants,
    pub terminal: QuadraticCost,
    pub running: RunningCost,
    pub horizon: f64,
    pub x0: DVector<f64>,
    pub controlled: ControlMask,
}

impl fmt::Debug for ProblemSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProblemSpec")
            .field("n", &self.n)
            .field("m", &self.m)
            .field("d", &self.d)
            .field("set", &self.set)
            .field("horizon", &self.horizon)
            .field("x0", &self.x0.as_slice())
            .field("controlled", &self.controlled)
            .finish()
    }
}

impl ProblemSpec {
    /// Checks dimensions and the sign of the horizon.
    pub fn validate(&self) -> Result<()> {
        let n = self.n;
        if self.set.dim() != n || self.x0.len() != n {
            return Err(Error::Dimension(format!(
                "state dimension {n}, set dimension {}, x0 length {}",
                self.set.dim(),
                self.x0.len()
            )));
        }
        if !(self.horizon > 0.0) {
            return Err(Error::Domain(format!("horizon {} must be positive", self.horizon)));
        }
        if self.terminal.dim() != n {
            return Err(Error::Dimension("terminal cost must act on the state".into()));
        }
        if let Some(q) = &self.running.state {
            if q.dim() != 2 * n + self.m + self.d {
                return Err(Error::Dimension(format!(
                    "running state cost has dimension {}, expected {}",
                    q.dim(),
                    2 * n + self.m + self.d
                )));
            }
        }
        for (q, dim, name) in [
            (&self.running.x_rate, n, "x rate"),
            (&self.running.u_rate, n, "u rate"),
            (&self.running.a_rate, self.m, "a rate"),
            (&self.running.b_rate, self.d, "b rate"),
        ] {
            if let Some(q) = q {
                if q.dim() != dim {
                    return Err(Error::Dimension(format!("{name} cost has dimension {}", q.dim())));
                }
            }
        }
        let probe_a = DVector::zeros(self.m);
        let probe_b = DVector::zeros(self.d);
        if self.f1.eval(&probe_a, &self.x0).len() != n || self.f2.eval(&probe_b, &self.x0).len() != n {
            return Err(Error::Dimension("drift and kernel must map into the state space".into()));
        }
        Ok(())
    }

    pub fn terminal_cost(&self, x: &DVector<f64>) -> f64 {
        self.terminal.value(x)
    }

    /// Samples the growth bounds `‖f₁(a,x)‖ ≤ ‖a‖ + α₁‖x‖` and
    /// `‖f₂(b,x)‖ ≤ ‖b‖ + α₂‖x‖` at the given points and returns the number
    /// of violations.
    pub fn growth_violations(&self, points: &[(DVector<f64>, DVector<f64>, DVector<f64>)]) -> usize {
        let slack = 1e-12;
        points
            .iter()
            .filter(|(x, a, b)| {
                let f1 = self.f1.eval(a, x).norm();
                let f2 = self.f2.eval(b, x).norm();
                f1 > a.norm() + self.growth.alpha1 * x.norm() + slack
                    || f2 > b.norm() + self.growth.alpha2 * x.norm() + slack
            })
            .count()
    }
}
