//! Catching-up integration of the controlled integro-differential sweeping
//! process, discrete reconstruction of feasible solutions, and the Gronwall
//! and `W^{1,2}` distance utilities.

mod problem;
mod trajectory;

pub use problem::{
    ControlMask, CostGradient, GrowthConstants, LinearField, ProblemSpec, QuadraticCost,
    RunningCost, VectorField,
};
pub use trajectory::{ControlSchedule, Mesh, Quintuple, Reference, Trajectory};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{self, Decomposition, Projection};
use crate::linalg;
use crate::quad;

/// One catching-up step with its normal-cone certificate.
#[derive(Debug, Clone)]
pub struct StepResult {
    pub x: DVector<f64>,
    pub y: DVector<f64>,
    pub projection: Projection,
    /// Decomposition of `(x_j − x_{j+1})/h − f₁ − y_{j+1}` in the normal cone at `x_{j+1} − u_{j+1}`.
    pub certificate: Decomposition,
}

fn check_finite(v: &DVector<f64>, what: &'static str, node: usize) -> Result<()> {
    if v.iter().all(|c| c.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { what, node })
    }
}

/// `y⁺ = y + h f₂(b, x)` followed by `x⁺ = Π_{C + u⁺}(x − h (f₁(a, x) + y⁺))`.
pub fn step(
    spec: &ProblemSpec,
    x: &DVector<f64>,
    y: &DVector<f64>,
    u_next: &DVector<f64>,
    a: &DVector<f64>,
    b: &DVector<f64>,
    h: f64,
) -> Result<StepResult> {
    if !(h > 0.0) {
        return Err(Error::Domain(format!("step size {h} must be positive")));
    }
    let f2 = spec.f2.eval(b, x);
    check_finite(&f2, "kernel f2", 0)?;
    let y_next = y + &f2 * h;
    let f1 = spec.f1.eval(a, x);
    check_finite(&f1, "drift f1", 0)?;
    let pre = x - (&f1 + &y_next) * h;
    let projection = geometry::project(&spec.set, u_next, &pre)?;
    let x_next = projection.point.clone();
    let w = (x - &x_next) / h - &f1 - &y_next;
    let tol = 1e-8 * (1.0 + x.norm() / h);
    let certificate = geometry::normal_cone_decompose(&spec.set, &x_next, u_next, &w, tol)?;
    Ok(StepResult { x: x_next, y: y_next, projection, certificate })
}

/// Right-hand sides of the a-priori estimates evaluated along a discrete trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    /// `l̃` with the inner `b`-integral taken over `[0, T]`, as printed.
    pub l_tilde: f64,
    /// `l̃` with the inner `b`-integral taken over `[0, s]`.
    pub l_tilde_inner_to_s: f64,
    /// Per interval: `‖ẋ + f₁ + y‖` and its bound.
    pub drift_lhs: Vec<f64>,
    pub drift_rhs: Vec<f64>,
    /// Per interval: `‖ẋ‖` and its bound.
    pub velocity_lhs: Vec<f64>,
    pub velocity_rhs: Vec<f64>,
    /// Per interval: `‖ẏ‖` and its bound.
    pub memory_lhs: Vec<f64>,
    pub memory_rhs: Vec<f64>,
    /// Intervals where some left side exceeds its bound by more than 5%.
    pub flagged: Vec<usize>,
}

impl BoundReport {
    fn build(spec: &ProblemSpec, tr: &Trajectory) -> Self {
        let mesh = &tr.mesh;
        let k = mesh.k();
        let t = mesh.nodes();
        let horizon = mesh.horizon();
        let g = spec.growth;
        let beta1: Vec<f64> = tr.a.iter().map(|a| a.norm().max(g.alpha1)).collect();
        let btilde: Vec<f64> = beta1.iter().map(|&b1| 2.0 * b1.max(g.alpha2)).collect();
        let bnorm: Vec<f64> = tr.b.iter().map(|b| b.norm()).collect();
        let b_cum = quad::cumulative_trapezoid(t, &bnorm);
        let btilde_cum = quad::cumulative_trapezoid(t, &btilde);
        let b_total = b_cum[k];
        let growth: Vec<f64> = btilde.iter().map(|v| v + 1.0).collect();
        let e = quad::trapezoid(t, &growth).exp();
        let udot_int: f64 = (0..k).map(|j| (&tr.u[j + 1] - &tr.u[j]).norm()).sum();
        let beta_int = quad::trapezoid(t, &beta1);
        let x0 = tr.x[0].norm();
        let l_tilde = x0 * e + e * (udot_int + 2.0 * beta_int + 2.0 * horizon * b_total);
        let inner_s = quad::trapezoid(t, &b_cum);
        let l_tilde_inner_to_s = x0 * e + e * (udot_int + 2.0 * beta_int + 2.0 * inner_s);

        let mut report = Self {
            l_tilde,
            l_tilde_inner_to_s,
            drift_lhs: Vec::with_capacity(k),
            drift_rhs: Vec::with_capacity(k),
            velocity_lhs: Vec::with_capacity(k),
            velocity_rhs: Vec::with_capacity(k),
            memory_lhs: Vec::with_capacity(k),
            memory_rhs: Vec::with_capacity(k),
            flagged: Vec::new(),
        };
        for j in 0..k {
            let h = mesh.h(j);
            let xd = (&tr.x[j + 1] - &tr.x[j]) / h;
            let yd = (&tr.y[j + 1] - &tr.y[j]) / h;
            let ud = (&tr.u[j + 1] - &tr.u[j]).norm() / h;
            let f1 = spec.f1.eval(&tr.a[j], &tr.x[j]);
            let drift = (&xd + &f1 + &tr.y[j]).norm();
            let drift_rhs = ud + (1.0 + l_tilde) * beta1[j] + b_cum[j] + horizon * g.alpha2 * l_tilde;
            let vel_rhs =
                ud + 2.0 * (1.0 + l_tilde) * beta1[j] + 2.0 * btilde_cum[j] + 2.0 * horizon * g.alpha2 * l_tilde;
            let mem_rhs = bnorm[j] + g.alpha2 * l_tilde;
            let pairs = [
                (drift, drift_rhs),
                (xd.norm(), vel_rhs),
                (yd.norm(), mem_rhs),
            ];
            if pairs.iter().any(|&(l, r)| l > 1.05 * r + 1e-12) {
                report.flagged.push(j);
            }
            report.drift_lhs.push(drift);
            report.drift_rhs.push(drift_rhs);
            report.velocity_lhs.push(xd.norm());
            report.velocity_rhs.push(vel_rhs);
            report.memory_lhs.push(yd.norm());
            report.memory_rhs.push(mem_rhs);
        }
        report
    }
}

/// Output of [`simulate`].
#[derive(Debug, Clone)]
pub struct Simulation {
    pub trajectory: Trajectory,
    pub bounds: BoundReport,
    /// Largest normal-cone certificate residual over all steps.
    pub max_certificate_residual: f64,
    /// Projections per step, used for sensitivities.
    pub projections: Vec<Projection>,
}

/// Runs the catching-up scheme under node-indexed controls.
pub fn simulate(spec: &ProblemSpec, controls: &ControlSchedule) -> Result<Simulation> {
    spec.validate()?;
    let mesh = &controls.mesh;
    let k = mesh.k();
    if controls.u.len() != k + 1 || controls.a.len() != k + 1 || controls.b.len() != k + 1 {
        return Err(Error::Dimension("controls must have one value per mesh node".into()));
    }
    if (mesh.horizon() - spec.horizon).abs() > 1e-12 * spec.horizon.max(1.0) {
        return Err(Error::Domain(format!(
            "mesh horizon {} differs from problem horizon {}",
            mesh.horizon(),
            spec.horizon
        )));
    }
    let tol = geometry::default_active_tol(&spec.x0);
    if !spec.set.contains(&controls.u[0], &spec.x0, tol)? {
        return Err(Error::Domain("initial state is outside C(u(0))".into()));
    }
    let mut x = vec![spec.x0.clone()];
    let mut y = vec![DVector::zeros(spec.n)];
    let mut projections = Vec::with_capacity(k);
    let mut max_res: f64 = 0.0;
    for j in 0..k {
        let r = step(spec, &x[j], &y[j], &controls.u[j + 1], &controls.a[j], &controls.b[j], mesh.h(j))
            .map_err(|e| match e {
                Error::NonFinite { what, .. } => Error::NonFinite { what, node: j },
                other => other,
            })?;
        max_res = max_res.max(r.certificate.residual);
        x.push(r.x);
        y.push(r.y);
        projections.push(r.projection);
    }
    let trajectory = Trajectory {
        mesh: mesh.clone(),
        x,
        y,
        u: controls.u.clone(),
        a: controls.a.clone(),
        b: controls.b.clone(),
    };
    let bounds = BoundReport::build(spec, &trajectory);
    Ok(Simulation { trajectory, bounds, max_certificate_residual: max_res, projections })
}

/// Sup-norm and squared `L²` derivative distance between two trajectories.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct W12Distance {
    pub sup_norm: f64,
    /// `∫ ‖ż₁ − ż₂‖² dt`.
    pub l2_derivative: f64,
}

/// Distance over the common refinement of both breakpoint sets; each refined
/// panel is split in `subdivisions` pieces for sampling and integration.
pub fn w12_distance_refined(
    z1: &dyn Reference,
    z2: &dyn Reference,
    subdivisions: usize,
) -> Result<W12Distance> {
    let horizon = z1.horizon();
    if (horizon - z2.horizon()).abs() > 1e-12 * horizon.max(1.0) {
        return Err(Error::Domain(format!(
            "horizons differ: {} vs {}",
            horizon,
            z2.horizon()
        )));
    }
    if z1.dims() != z2.dims() {
        return Err(Error::Dimension(format!("dims {:?} vs {:?}", z1.dims(), z2.dims())));
    }
    let mut pts: Vec<f64> = z1.breakpoints();
    pts.extend(z2.breakpoints());
    pts.push(0.0);
    pts.push(horizon);
    pts.retain(|t| (0.0..=horizon).contains(t));
    pts.sort_by(f64::total_cmp);
    pts.dedup_by(|a, b| (*a - *b).abs() <= 1e-14 * horizon.max(1.0));
    let subdivisions = subdivisions.max(1);
    let mut sup: f64 = 0.0;
    let mut l2 = 0.0;
    for w in pts.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        let dt = (hi - lo) / subdivisions as f64;
        for s in 0..subdivisions {
            let a = lo + dt * s as f64;
            let b = a + dt;
            l2 += quad::gauss_legendre(a, b, |t| z1.velocity(t).sub(&z2.velocity(t)).norm_squared());
            sup = sup.max(z1.value(a).sub(&z2.value(a)).norm());
        }
    }
    sup = sup.max(z1.value(horizon).sub(&z2.value(horizon)).norm());
    Ok(W12Distance { sup_norm: sup, l2_derivative: l2 })
}

/// [`w12_distance_refined`] with four sub-panels per refined interval.
pub fn w12_distance(z1: &dyn Reference, z2: &dyn Reference) -> Result<W12Distance> {
    w12_distance_refined(z1, z2, 4)
}

/// Discrete feasible approximation of a reference solution.
#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub trajectory: Trajectory,
    pub distance: W12Distance,
    /// Largest residual of the cone projections.
    pub max_projection_residual: f64,
}

/// Builds `z^k` by shifting the set along the reference, projecting the
/// reference velocity onto the explicit velocity set, and accumulating the
/// memory term with the left rectangle rule.
pub fn reconstruct_discrete_feasible(
    spec: &ProblemSpec,
    reference: &dyn Reference,
    mesh: &Mesh,
) -> Result<Reconstruction> {
    spec.validate()?;
    if (reference.horizon() - mesh.horizon()).abs() > 1e-12 * mesh.horizon().max(1.0) {
        return Err(Error::Domain("reference and mesh horizons differ".into()));
    }
    let k = mesh.k();
    let mut x = vec![spec.x0.clone()];
    let mut y = vec![DVector::zeros(spec.n)];
    let mut u = Vec::with_capacity(k + 1);
    let mut a = Vec::with_capacity(k + 1);
    let mut b = Vec::with_capacity(k + 1);
    let mut max_res: f64 = 0.0;
    for j in 0..k {
        let t = mesh.t(j);
        let h = mesh.h(j);
        let zr = reference.value(t);
        let vr = reference.velocity(t);
        let uj = &x[j] - &zr.x + &zr.u;
        let y_next = &y[j] + spec.f2.eval(&zr.b, &x[j]) * h;
        let c = spec.f1.eval(&zr.a, &x[j]) + &y_next;
        check_finite(&c, "drift f1", j)?;
        let base = &x[j] - &uj;
        let tol = geometry::default_active_tol(&base);
        let active = geometry::active_set(&spec.set, &base, tol)?.to_vec();
        let q = -&vr.x - &c;
        let g = spec.set.gradients_of(&base, &active);
        // Projection of q onto the cone {−G η : η ≥ 0} is −G η* with η* = argmin ‖G η + q‖.
        let (eta, res) = linalg::nnls(&g, &(-&q));
        let cone_part = -(&g * &eta);
        max_res = max_res.max(res.min((&cone_part - &q).norm()));
        let v = -(&c + &cone_part);
        x.push(&x[j] + &v * h);
        y.push(y_next);
        u.push(uj);
        a.push(zr.a);
        b.push(zr.b);
    }
    let zt = reference.value(mesh.horizon());
    u.push(&x[k] - &zt.x + &zt.u);
    a.push(zt.a);
    b.push(zt.b);
    let trajectory = Trajectory { mesh: mesh.clone(), x, y, u, a, b };
    let distance = w12_distance(&trajectory, reference)?;
    Ok(Reconstruction { trajectory, distance, max_projection_residual: max_res })
}

/// `(e₀ + Σ_{k<i} σ_k) exp(Σ_{k<i} (k ρ_k + γ_k))`.
pub fn discrete_gronwall(e0: f64, sigmas: &[f64], rhos: &[f64], gammas: &[f64], i: usize) -> Result<f64> {
    if i > sigmas.len() || i > rhos.len() || i > gammas.len() {
        return Err(Error::Domain(format!("index {i} exceeds sequence length")));
    }
    let bad = |v: f64| v < 0.0 || v.is_nan();
    if bad(e0) || sigmas[..i].iter().chain(&rhos[..i]).chain(&gammas[..i]).any(|&v| bad(v)) {
        return Err(Error::Domain("Gronwall inputs must be nonnegative".into()));
    }
    let s: f64 = e0 + sigmas[..i].iter().sum::<f64>();
    let expo: f64 = (0..i).map(|k| k as f64 * rhos[k] + gammas[k]).sum();
    Ok(s * expo.exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::MovingSet;
    use nalgebra::DMatrix;
    use std::sync::Arc;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    fn orthant_spec(f1: LinearField, f2: LinearField, x0: DVector<f64>) -> ProblemSpec {
        let n = x0.len();
        let m = f1.control.ncols();
        let d = f2.control.ncols();
        ProblemSpec {
            set: MovingSet::orthant(n),
            n,
            m,
            d,
            f1: Arc::new(f1),
            f2: Arc::new(f2),
            growth: GrowthConstants::default(),
            terminal: QuadraticCost::zero(n),
            running: RunningCost::zero(),
            horizon: 1.0,
            x0,
            controlled: ControlMask::default(),
        }
    }

    #[test]
    fn zero_drift_keeps_interior_point() {
        let spec = orthant_spec(
            LinearField::new(DMatrix::zeros(2, 0), DMatrix::zeros(2, 2)),
            LinearField::state_only(DMatrix::zeros(2, 2)),
            v(&[0.3, 0.7]),
        );
        let r = step(&spec, &v(&[0.3, 0.7]), &v(&[0.0, 0.0]), &v(&[0.0, 0.0]), &v(&[]), &v(&[]), 0.1)
            .unwrap();
        assert_eq!(r.x, v(&[0.3, 0.7]));
        assert_eq!(r.y, v(&[0.0, 0.0]));
    }

    #[test]
    fn boundary_step_clamps_euler_point() {
        // Drift pushes x1 below zero: the one-step QP solution on the orthant is the clamp.
        let f1 = LinearField {
            control: DMatrix::zeros(2, 0),
            state: DMatrix::zeros(2, 2),
            offset: v(&[3.0, -1.0]),
        };
        let spec = orthant_spec(f1, LinearField::state_only(DMatrix::zeros(2, 2)), v(&[0.0, 1.0]));
        let r = step(&spec, &v(&[0.0, 1.0]), &v(&[0.0, 0.0]), &v(&[0.0, 0.0]), &v(&[]), &v(&[]), 0.1)
            .unwrap();
        assert_eq!(r.x, v(&[0.0, 1.1]));
        assert!(r.certificate.feasible);
        assert!((r.certificate.lambda[0] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn gronwall_examples() {
        assert_eq!(discrete_gronwall(2.0, &[0.0; 5], &[0.0; 5], &[0.0; 5], 5).unwrap(), 2.0);
        assert!((discrete_gronwall(0.0, &[0.5; 7], &[0.0; 7], &[0.0; 7], 7).unwrap() - 3.5).abs() < 1e-15);
        assert!(discrete_gronwall(-1.0, &[0.0], &[0.0], &[0.0], 1).is_err());
        assert!(discrete_gronwall(0.0, &[0.0], &[0.0], &[0.0], 2).is_err());
    }

    fn line(mesh: &Mesh, slope: f64, offset: f64) -> Trajectory {
        let z = |t: f64| v(&[offset + slope * t]);
        let e = || vec![v(&[]); mesh.k() + 1];
        Trajectory {
            mesh: mesh.clone(),
            x: mesh.nodes().iter().map(|&t| z(t)).collect(),
            y: mesh.nodes().iter().map(|_| v(&[0.0])).collect(),
            u: mesh.nodes().iter().map(|_| v(&[0.0])).collect(),
            a: e(),
            b: e(),
        }
    }

    #[test]
    fn w12_examples() {
        let mesh = Mesh::uniform(1.0, 3).unwrap();
        let t1 = line(&mesh, 1.0, 0.0);
        let d = w12_distance(&t1, &t1).unwrap();
        assert_eq!((d.sup_norm, d.l2_derivative), (0.0, 0.0));
        let t2 = line(&Mesh::uniform(1.0, 5).unwrap(), 1.0, 0.5);
        let d = w12_distance(&t1, &t2).unwrap();
        assert!((d.sup_norm - 0.5).abs() < 1e-14 && d.l2_derivative < 1e-28);
        let t3 = line(&mesh, 2.0, 0.0);
        let d = w12_distance(&t1, &t3).unwrap();
        assert!((d.sup_norm - 1.0).abs() < 1e-14 && (d.l2_derivative - 1.0).abs() < 1e-14);
    }

    #[test]
    fn w12_rejects_mismatched_horizons() {
        let t1 = line(&Mesh::uniform(1.0, 3).unwrap(), 1.0, 0.0);
        let t2 = line(&Mesh::uniform(2.0, 3).unwrap(), 1.0, 0.0);
        assert!(w12_distance(&t1, &t2).is_err());
    }
}
