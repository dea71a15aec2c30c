//! Moving sets `C(u) = C + u` with `C = {x : g_i(x) ≥ 0}`: projections,
//! active sets, normal-cone decompositions and regularity diagnostics.

use std::collections::BTreeSet;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// A smooth scalar constraint `g(x) ≥ 0`.
pub trait Constraint: Send + Sync {
    fn value(&self, x: &DVector<f64>) -> f64;
    fn gradient(&self, x: &DVector<f64>) -> DVector<f64>;
    fn hessian(&self, x: &DVector<f64>) -> DMatrix<f64>;
    /// True when the Hessian vanishes identically.
    fn is_affine(&self) -> bool {
        false
    }
}

/// `g(x) = ⟨normal, x⟩ + offset`.
#[derive(Debug, Clone)]
pub struct AffineConstraint {
    pub normal: DVector<f64>,
    pub offset: f64,
}

impl Constraint for AffineConstraint {
    fn value(&self, x: &DVector<f64>) -> f64 {
        self.normal.dot(x) + self.offset
    }
    fn gradient(&self, _x: &DVector<f64>) -> DVector<f64> {
        self.normal.clone()
    }
    fn hessian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::zeros(x.len(), x.len())
    }
    fn is_affine(&self) -> bool {
        true
    }
}

/// `g(x) = r² − ‖x − center‖²`, the closed ball of radius `r`.
#[derive(Debug, Clone)]
pub struct BallConstraint {
    pub center: DVector<f64>,
    pub radius: f64,
}

impl Constraint for BallConstraint {
    fn value(&self, x: &DVector<f64>) -> f64 {
        self.radius * self.radius - (x - &self.center).norm_squared()
    }
    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        (x - &self.center) * -2.0
    }
    fn hessian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::identity(x.len(), x.len()) * -2.0
    }
}

type ScalarFn = dyn Fn(&DVector<f64>) -> f64 + Send + Sync;
type VectorFn = dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync;
type MatrixFn = dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync;

/// Constraint assembled from host-supplied closures.
#[derive(Clone)]
pub struct FnConstraint {
    pub value: Arc<ScalarFn>,
    pub gradient: Arc<VectorFn>,
    pub hessian: Arc<MatrixFn>,
}

impl Constraint for FnConstraint {
    fn value(&self, x: &DVector<f64>) -> f64 {
        (self.value)(x)
    }
    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        (self.gradient)(x)
    }
    fn hessian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        (self.hessian)(x)
    }
}

/// Bounds `M1 ≤ ‖∇g_i‖ ≤ M2`, `‖∇²g_i‖ ≤ M3`, the positive-combination
/// constant `beta` and the perturbation radius `rho`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegularityConstants {
    pub m1: f64,
    pub m2: f64,
    pub m3: f64,
    pub beta: f64,
    pub rho: f64,
}

impl Default for RegularityConstants {
    fn default() -> Self {
        Self { m1: 1.0, m2: 1.0, m3: 0.0, beta: 1.0, rho: 1.0 }
    }
}

/// `C = {x ∈ ℝⁿ : g_i(x) ≥ 0, i = 1..s}` together with its declared constants.
#[derive(Clone)]
pub struct MovingSet {
    dim: usize,
    constraints: Vec<Arc<dyn Constraint>>,
    pub constants: RegularityConstants,
}

impl fmt::Debug for MovingSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MovingSet")
            .field("dim", &self.dim)
            .field("constraints", &self.constraints.len())
            .field("affine", &self.is_affine())
            .field("constants", &self.constants)
            .finish()
    }
}

impl MovingSet {
    pub fn new(
        dim: usize,
        constraints: Vec<Arc<dyn Constraint>>,
        constants: RegularityConstants,
    ) -> Self {
        Self { dim, constraints, constants }
    }

    /// The nonnegative orthant `ℝⁿ₊`, `g_i(x) = x_i`.
    pub fn orthant(dim: usize) -> Self {
        let constraints = (0..dim)
            .map(|i| {
                let mut normal = DVector::zeros(dim);
                normal[i] = 1.0;
                Arc::new(AffineConstraint { normal, offset: 0.0 }) as Arc<dyn Constraint>
            })
            .collect();
        Self::new(dim, constraints, RegularityConstants::default())
    }

    /// Polyhedron `{x : A x + c ≥ 0}` with one constraint per row of `a`.
    pub fn affine(a: &DMatrix<f64>, offsets: &DVector<f64>) -> Result<Self> {
        if a.nrows() != offsets.len() {
            return Err(Error::Dimension(format!(
                "{} constraint rows but {} offsets",
                a.nrows(),
                offsets.len()
            )));
        }
        let norms: Vec<f64> = (0..a.nrows()).map(|i| a.row(i).norm()).collect();
        let m1 = norms.iter().copied().fold(f64::INFINITY, f64::min);
        let m2 = norms.iter().copied().fold(0.0, f64::max);
        let constraints = (0..a.nrows())
            .map(|i| {
                Arc::new(AffineConstraint {
                    normal: a.row(i).transpose(),
                    offset: offsets[i],
                }) as Arc<dyn Constraint>
            })
            .collect();
        let constants = RegularityConstants {
            m1: if m1.is_finite() { m1 } else { 1.0 },
            m2: m2.max(1.0e-300),
            m3: 0.0,
            beta: 1.0,
            rho: 1.0,
        };
        Ok(Self::new(a.ncols(), constraints, constants))
    }

    /// Closed ball of radius `radius` around the origin, `g(x) = r² − ‖x‖²`.
    ///
    /// The constants are those of the annulus `r/2 ≤ ‖x‖ ≤ r` where the
    /// constraint can be active.
    pub fn ball(dim: usize, radius: f64) -> Self {
        let c = BallConstraint { center: DVector::zeros(dim), radius };
        let constants = RegularityConstants {
            m1: radius,
            m2: 2.0 * radius,
            m3: 2.0,
            beta: 1.0,
            rho: 0.75 * radius * radius,
        };
        Self::new(dim, vec![Arc::new(c)], constants)
    }

    /// Whole space, no constraints.
    pub fn free(dim: usize) -> Self {
        Self::new(dim, Vec::new(), RegularityConstants::default())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.constraints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.constraints.is_empty()
    }

    pub fn is_affine(&self) -> bool {
        self.constraints.iter().all(|c| c.is_affine())
    }

    pub fn constraint(&self, i: usize) -> &dyn Constraint {
        self.constraints[i].as_ref()
    }

    /// All constraint values `g(x)`.
    pub fn values(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let mut v = DVector::zeros(self.len());
        for (i, c) in self.constraints.iter().enumerate() {
            let gi = c.value(x);
            if !gi.is_finite() {
                return Err(Error::Evaluation { index: i });
            }
            v[i] = gi;
        }
        Ok(v)
    }

    /// Gradients as the columns of an `n × s` matrix.
    pub fn gradients(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let mut g = DMatrix::zeros(self.dim, self.len());
        for (i, c) in self.constraints.iter().enumerate() {
            g.set_column(i, &c.gradient(x));
        }
        g
    }

    /// Gradients of the listed constraints as columns.
    pub fn gradients_of(&self, x: &DVector<f64>, idx: &[usize]) -> DMatrix<f64> {
        let mut g = DMatrix::zeros(self.dim, idx.len());
        for (k, &i) in idx.iter().enumerate() {
            g.set_column(k, &self.constraints[i].gradient(x));
        }
        g
    }

    /// `Σ weights_i ∇²g_i(x)`.
    pub fn weighted_hessian(&self, x: &DVector<f64>, weights: &DVector<f64>) -> DMatrix<f64> {
        let mut h = DMatrix::zeros(self.dim, self.dim);
        for (i, c) in self.constraints.iter().enumerate() {
            if weights[i] != 0.0 && !c.is_affine() {
                h += c.hessian(x) * weights[i];
            }
        }
        h
    }

    /// Membership of `x` in `C + shift` up to `tol`.
    pub fn contains(&self, shift: &DVector<f64>, x: &DVector<f64>, tol: f64) -> Result<bool> {
        let v = self.values(&(x - shift))?;
        Ok(v.iter().all(|&g| g >= -tol))
    }
}

/// Indices `i` with `g_i(y) ≤ threshold`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActiveIndexSet {
    pub indices: BTreeSet<usize>,
    pub threshold: f64,
}

impl ActiveIndexSet {
    pub fn contains(&self, i: usize) -> bool {
        self.indices.contains(&i)
    }
    pub fn to_vec(&self) -> Vec<usize> {
        self.indices.iter().copied().collect()
    }
    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Default scale-aware active tolerance `1e-8 (1 + ‖x‖)`.
pub fn default_active_tol(x: &DVector<f64>) -> f64 {
    1e-8 * (1.0 + x.norm())
}

/// Returns `{i : g_i(y) ≤ tol}`; with `tol = ρ` this is the perturbed index set.
pub fn active_set(set: &MovingSet, y: &DVector<f64>, tol: f64) -> Result<ActiveIndexSet> {
    if tol < 0.0 || tol.is_nan() {
        return Err(Error::Domain("active-set tolerance must be nonnegative".into()));
    }
    let values = set.values(y)?;
    let indices = values
        .iter()
        .enumerate()
        .filter(|(_, &g)| g <= tol)
        .map(|(i, _)| i)
        .collect();
    Ok(ActiveIndexSet { indices, threshold: tol })
}

/// Raised when a nonconvex projection starts farther than `η` from the set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DomainWarning {
    pub distance: f64,
    pub eta: f64,
}

/// Result of projecting onto `C + u`.
#[derive(Debug, Clone)]
pub struct Projection {
    /// Projected point in `C + u`.
    pub point: DVector<f64>,
    /// Multipliers with `point − p = Σ λ_i ∇g_i(point − u)`, `λ ≥ 0`.
    pub multipliers: DVector<f64>,
    pub iterations: usize,
    /// Stationarity plus feasibility residual at termination.
    pub residual: f64,
    pub warning: Option<DomainWarning>,
}

impl Projection {
    /// Jacobian of the projection map with respect to the projected point,
    /// computed from the strongly active constraints at the solution.
    pub fn jacobian(&self, set: &MovingSet, shift: &DVector<f64>) -> DMatrix<f64> {
        let n = set.dim();
        let y = &self.point - shift;
        let scale = self.multipliers.amax().max(1.0);
        let strong: Vec<usize> = (0..set.len())
            .filter(|&i| self.multipliers[i] > 1e-12 * scale)
            .collect();
        let mut h = DMatrix::identity(n, n);
        if !set.is_affine() {
            h -= set.weighted_hessian(&y, &self.multipliers);
        }
        let hinv = h
            .clone()
            .try_inverse()
            .unwrap_or_else(|| DMatrix::identity(n, n));
        if strong.is_empty() {
            return hinv;
        }
        let g = set.gradients_of(&y, &strong).transpose();
        let ghg = &g * &hinv * g.transpose();
        let pinv = ghg
            .clone()
            .pseudo_inverse(1e-12)
            .unwrap_or_else(|_| DMatrix::zeros(strong.len(), strong.len()));
        let p = &hinv - &hinv * g.transpose() * pinv * &g * &hinv;
        (&p + p.transpose()) * 0.5
    }
}

const PROJECTION_MAX_ITER: usize = 100;
const PROJECTION_TOL: f64 = 1e-10;

/// Euclidean projection of `p` onto `C + shift`.
pub fn project(set: &MovingSet, shift: &DVector<f64>, p: &DVector<f64>) -> Result<Projection> {
    if p.len() != set.dim() || shift.len() != set.dim() {
        return Err(Error::Dimension(format!(
            "projection in dimension {} with point of length {} and shift of length {}",
            set.dim(),
            p.len(),
            shift.len()
        )));
    }
    let q = p - shift;
    let mut proj = if set.is_empty() {
        Projection {
            point: q.clone(),
            multipliers: DVector::zeros(0),
            iterations: 0,
            residual: 0.0,
            warning: None,
        }
    } else if set.is_affine() {
        project_affine(set, &q)?
    } else {
        project_nonlinear(set, &q)?
    };
    if !set.is_affine() {
        let eta = prox_radius(&set.constants).unwrap_or(f64::INFINITY);
        let dist = (&proj.point - &q).norm();
        if dist > eta {
            proj.warning = Some(DomainWarning { distance: dist, eta });
        }
    }
    proj.point += shift;
    Ok(proj)
}

fn project_affine(set: &MovingSet, q: &DVector<f64>) -> Result<Projection> {
    // Dual of min ½‖z − q‖² s.t. A z + c ≥ 0 is min ½ μᵀAAᵀμ + μᵀ(Aq + c), μ ≥ 0.
    let a = set.gradients(q).transpose();
    let c = set.values(q)?;
    let r = c.clone();
    let qm = &a * a.transpose();
    let mu = linalg::bound_qp(&qm, &r);
    let mut z = q + a.transpose() * &mu;
    // One refinement pass on the equality-active rows removes dual roundoff.
    let active: Vec<usize> = (0..mu.len()).filter(|&i| mu[i] > 0.0).collect();
    if !active.is_empty() {
        let aa = DMatrix::from_fn(active.len(), z.len(), |r, col| a[(active[r], col)]);
        let gz = set.values(&z)?;
        let viol = DVector::from_fn(active.len(), |r, _| -gz[active[r]]);
        let corr = linalg::lstsq(&(&aa * aa.transpose()), &viol);
        z += aa.transpose() * corr;
    }
    let gz = set.values(&z)?;
    let infeas = gz.iter().map(|&g| (-g).max(0.0)).fold(0.0, f64::max);
    Ok(Projection {
        point: z,
        multipliers: mu,
        iterations: 1,
        residual: infeas,
        warning: None,
    })
}

fn project_nonlinear(set: &MovingSet, q: &DVector<f64>) -> Result<Projection> {
    let n = set.dim();
    let s = set.len();
    let mut z = q.clone();
    let mut lambda = DVector::zeros(s);
    let merit = |z: &DVector<f64>, nu: f64| -> Result<f64> {
        let g = set.values(z)?;
        Ok(0.5 * (z - q).norm_squared() + nu * g.iter().map(|&v| (-v).max(0.0)).sum::<f64>())
    };
    let mut residual = f64::INFINITY;
    for it in 0..PROJECTION_MAX_ITER {
        let g0 = set.values(&z)?;
        let jac = set.gradients(&z).transpose();
        let mut h = DMatrix::identity(n, n) - set.weighted_hessian(&z, &lambda);
        let hinv = match h.clone().cholesky() {
            Some(ch) => ch.inverse(),
            None => {
                h = DMatrix::identity(n, n);
                h.clone()
            }
        };
        let grad = &z - q;
        let qm = &jac * &hinv * jac.transpose();
        let r = &g0 - &jac * &hinv * &grad;
        let mu = linalg::bound_qp(&qm, &r);
        let d = &hinv * (jac.transpose() * &mu - &grad);

        let stationarity = (&grad - jac.transpose() * &mu).norm();
        let infeas = g0.iter().map(|&v| (-v).max(0.0)).fold(0.0, f64::max);
        let comp = (0..s).map(|i| (mu[i] * g0[i]).abs()).fold(0.0, f64::max);
        residual = stationarity.max(infeas).max(comp);
        lambda = mu;
        if d.norm() <= PROJECTION_TOL * (1.0 + z.norm()) && infeas <= PROJECTION_TOL {
            return Ok(Projection {
                point: z,
                multipliers: lambda,
                iterations: it,
                residual,
                warning: None,
            });
        }
        let nu = 1.0 + lambda.amax() * 2.0;
        let m0 = merit(&z, nu)?;
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let trial = &z + &d * step;
            if merit(&trial, nu)? <= m0 - 1e-4 * step * d.norm_squared().min(m0.abs() + 1.0)
                || step < 1e-10
            {
                z = trial;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            z += &d * step;
        }
    }
    Err(Error::Projection {
        iterations: PROJECTION_MAX_ITER,
        residual,
        last_iterate: z.iter().copied().collect(),
    })
}

/// Multipliers of a normal-cone decomposition `−∇g(x−u)* λ = w`.
#[derive(Debug, Clone)]
pub struct Decomposition {
    /// Full-length multiplier vector, zero outside the active set.
    pub lambda: DVector<f64>,
    pub residual: f64,
    pub active: ActiveIndexSet,
    /// False when the residual exceeds the tolerance, i.e. `w ∉ N`.
    pub feasible: bool,
}

/// Solves `−∇g(x−u)* λ = w` over `λ ≥ 0` supported on the active set by NNLS.
pub fn normal_cone_decompose(
    set: &MovingSet,
    x: &DVector<f64>,
    u: &DVector<f64>,
    w: &DVector<f64>,
    tol: f64,
) -> Result<Decomposition> {
    let y = x - u;
    let values = set.values(&y)?;
    if values.iter().any(|&g| g < -tol) {
        return Err(Error::Domain(format!(
            "point is outside the set (min g = {:e})",
            values.min()
        )));
    }
    let active = active_set(set, &y, tol)?;
    let idx = active.to_vec();
    let g = set.gradients_of(&y, &idx);
    let (lam_a, residual) = linalg::nnls(&g, &(-w));
    let feasible = residual <= tol;
    if feasible && !idx.is_empty() && linalg::rank(&g) < idx.len() {
        return Err(Error::Ambiguous { active: idx });
    }
    let mut lambda = DVector::zeros(set.len());
    for (k, &i) in idx.iter().enumerate() {
        lambda[i] = lam_a[k];
    }
    Ok(Decomposition { lambda, residual, active, feasible })
}

/// Outcome of the positive-linear-independence test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlicqVerdict {
    pub holds: bool,
    /// Minimum of `‖Σ λ_i ∇g_i‖` over the unit simplex; `+∞` with no active constraint.
    pub margin: f64,
    pub active: Vec<usize>,
}

/// Positive linear independence of the active gradients at `x`.
pub fn check_plicq(set: &MovingSet, x: &DVector<f64>) -> PlicqVerdict {
    let tol = default_active_tol(x);
    let active = match active_set(set, x, tol) {
        Ok(a) => a.to_vec(),
        Err(_) => {
            return PlicqVerdict { holds: false, margin: 0.0, active: Vec::new() };
        }
    };
    if active.is_empty() {
        return PlicqVerdict { holds: true, margin: f64::INFINITY, active };
    }
    let points: Vec<DVector<f64>> =
        active.iter().map(|&i| set.constraint(i).gradient(x)).collect();
    let (_, p) = linalg::min_norm_in_hull(&points);
    let margin = p.norm();
    let scale = points.iter().map(|v| v.norm()).fold(0.0, f64::max).max(1.0);
    let margin = if margin < 1e-12 * scale { 0.0 } else { margin };
    PlicqVerdict { holds: margin > 0.0, margin, active }
}

/// Prox-regularity radius `η = M1 / (M3 β)`, infinite when `M3 = 0`.
pub fn prox_radius(c: &RegularityConstants) -> Result<f64> {
    if !(c.m1 > 0.0) || !(c.beta > 0.0) {
        return Err(Error::InvalidConstants(format!(
            "M1 = {} and beta = {} must be positive",
            c.m1, c.beta
        )));
    }
    if c.m3 < 0.0 || c.m3.is_nan() {
        return Err(Error::InvalidConstants(format!("M3 = {} must be nonnegative", c.m3)));
    }
    if c.m3 == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(c.m1 / (c.m3 * c.beta))
}

/// Sampled violations of the declared gradient and Hessian bounds.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConstantCheck {
    pub samples: usize,
    pub gradient_lower: usize,
    pub gradient_upper: usize,
    pub hessian: usize,
    pub observed_m1: f64,
    pub observed_m2: f64,
    pub observed_m3: f64,
}

impl ConstantCheck {
    pub fn passed(&self) -> bool {
        self.gradient_lower == 0 && self.gradient_upper == 0 && self.hessian == 0
    }
}

fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().svd(false, false).singular_values.max()
}

/// Samples points uniformly in `[lo, hi]` and counts violations of the
/// declared `M1, M2, M3` bounds at feasible points where a constraint is
/// within `ρ` of activity.
pub fn verify_constants<R: Rng>(
    set: &MovingSet,
    lo: &DVector<f64>,
    hi: &DVector<f64>,
    samples: usize,
    rng: &mut R,
) -> Result<ConstantCheck> {
    let c = set.constants;
    let mut out = ConstantCheck {
        samples,
        observed_m1: f64::INFINITY,
        ..Default::default()
    };
    let slack = 1e-9;
    for _ in 0..samples {
        let x = DVector::from_fn(set.dim(), |i, _| rng.gen_range(lo[i]..=hi[i]));
        for i in 0..set.len() {
            let con = set.constraint(i);
            let gi = con.value(&x);
            if !gi.is_finite() {
                return Err(Error::Evaluation { index: i });
            }
            if gi < 0.0 || gi > c.rho {
                continue;
            }
            let gn = con.gradient(&x).norm();
            let hn = spectral_norm(&con.hessian(&x));
            out.observed_m1 = out.observed_m1.min(gn);
            out.observed_m2 = out.observed_m2.max(gn);
            out.observed_m3 = out.observed_m3.max(hn);
            if gn < c.m1 * (1.0 - slack) {
                out.gradient_lower += 1;
            }
            if gn > c.m2 * (1.0 + slack) {
                out.gradient_upper += 1;
            }
            if hn > c.m3 * (1.0 + slack) + slack {
                out.hessian += 1;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    #[test]
    fn active_set_examples() {
        let c = MovingSet::orthant(2);
        let s = |p: &[f64]| active_set(&c, &v(p), 0.0).unwrap().to_vec();
        assert_eq!(s(&[0.0, 2.0]), vec![0]);
        assert!(s(&[1.0, 1.0]).is_empty());
        assert_eq!(s(&[0.0, 0.0]), vec![0, 1]);
    }

    #[test]
    fn active_set_reports_non_finite_constraint() {
        let c = MovingSet::orthant(2);
        let err = active_set(&c, &v(&[f64::NAN, 1.0]), 0.0).unwrap_err();
        assert!(matches!(err, Error::Evaluation { index: 0 }));
    }

    #[test]
    fn projection_examples() {
        let c = MovingSet::orthant(2);
        let p = project(&c, &v(&[0.0, 0.0]), &v(&[-1.0, 2.0])).unwrap();
        assert_eq!(p.point, v(&[0.0, 2.0]));
        let p = project(&c, &v(&[1.0, 1.0]), &v(&[0.0, 0.0])).unwrap();
        assert_eq!(p.point, v(&[1.0, 1.0]));
    }

    #[test]
    fn ball_projection_matches_boundary_grid_search() {
        let ball = MovingSet::ball(2, 1.0);
        let p = v(&[2.0, 0.0]);
        let got = project(&ball, &v(&[0.0, 0.0]), &p).unwrap().point;
        let best = (0..100_000)
            .map(|i| {
                let th = std::f64::consts::TAU * i as f64 / 100_000.0;
                v(&[th.cos(), th.sin()])
            })
            .min_by(|a, b| (a - &p).norm().total_cmp(&(b - &p).norm()))
            .unwrap();
        assert!((got - best).norm() < 1e-4);
    }

    #[test]
    fn decomposition_examples() {
        let c = MovingSet::orthant(2);
        let z = v(&[0.0, 0.0]);
        let d = normal_cone_decompose(&c, &v(&[0.0, 1.0]), &z, &v(&[-3.0, 0.0]), 1e-10).unwrap();
        assert!(d.feasible);
        assert!((d.lambda[0] - 3.0).abs() < 1e-14 && d.lambda[1] == 0.0);
        assert!(d.residual < 1e-14);
        let d = normal_cone_decompose(&c, &v(&[1.0, 1.0]), &z, &v(&[0.0, 0.0]), 1e-10).unwrap();
        assert!(d.feasible && d.lambda.iter().all(|&l| l == 0.0));
        let d = normal_cone_decompose(&c, &v(&[1.0, 1.0]), &z, &v(&[-1.0, 0.0]), 1e-10).unwrap();
        assert!(!d.feasible);
    }

    #[test]
    fn decomposition_rejects_opposite_gradients() {
        let a = DMatrix::from_row_slice(2, 1, &[1.0, -1.0]);
        let set = MovingSet::affine(&a, &v(&[0.0, 0.0])).unwrap();
        let err = normal_cone_decompose(&set, &v(&[0.0]), &v(&[0.0]), &v(&[-1.0]), 1e-10)
            .unwrap_err();
        assert!(matches!(err, Error::Ambiguous { .. }));
    }

    #[test]
    fn plicq_examples() {
        let c = MovingSet::orthant(2);
        let r = check_plicq(&c, &v(&[0.0, 0.0]));
        assert!(r.holds);
        assert!((r.margin - 0.5_f64.sqrt()).abs() < 1e-12);
        let single = MovingSet::affine(&DMatrix::from_row_slice(1, 1, &[1.0]), &v(&[0.0])).unwrap();
        let r = check_plicq(&single, &v(&[0.0]));
        assert!(r.holds && (r.margin - 1.0).abs() < 1e-14);
        let opp = MovingSet::affine(&DMatrix::from_row_slice(2, 1, &[1.0, -1.0]), &v(&[0.0, 0.0]))
            .unwrap();
        let r = check_plicq(&opp, &v(&[0.0]));
        assert!(!r.holds && r.margin == 0.0);
    }

    #[test]
    fn prox_radius_examples() {
        let k = |m1, m3, beta| RegularityConstants { m1, m2: 1.0, m3, beta, rho: 1.0 };
        assert_eq!(prox_radius(&k(1.0, 2.0, 1.0)).unwrap(), 0.5);
        assert_eq!(prox_radius(&k(1.0, 0.0, 1.0)).unwrap(), f64::INFINITY);
        assert_eq!(prox_radius(&k(2.0, 4.0, 0.5)).unwrap(), 1.0);
        assert!(prox_radius(&k(0.0, 1.0, 1.0)).is_err());
        assert!(prox_radius(&k(1.0, 1.0, -1.0)).is_err());
    }

    #[test]
    fn projection_jacobian_on_orthant_face() {
        let c = MovingSet::orthant(2);
        let z = v(&[0.0, 0.0]);
        let p = project(&c, &z, &v(&[-1.0, 2.0])).unwrap();
        let j = p.jacobian(&c, &z);
        assert!((j - DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0])).norm() < 1e-14);
    }

    #[test]
    fn declared_ball_constants_pass_sampling() {
        use rand::SeedableRng;
        let ball = MovingSet::ball(2, 1.0);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let lo = v(&[-1.0, -1.0]);
        let hi = v(&[1.0, 1.0]);
        let chk = verify_constants(&ball, &lo, &hi, 2000, &mut rng).unwrap();
        assert!(chk.passed(), "{chk:?}");
    }
}
