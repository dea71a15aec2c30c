//! Discrete approximation problems around a reference solution and a
//! reduced-space solver over control slopes.

use std::io::Write;
use std::sync::Arc;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{
    reconstruct_discrete_feasible, w12_distance, ControlSchedule, Mesh, ProblemSpec, Quintuple,
    Reconstruction, Reference, Trajectory, W12Distance,
};
use crate::error::{Error, Result};
use crate::geometry::{self, Projection};
use crate::quad;

/// Index of a component in `(x, y, u, a, b)`.
const X: usize = 0;
const Y: usize = 1;
const U: usize = 2;
const A: usize = 3;
const B: usize = 4;

fn component(tr: &Trajectory, c: usize) -> &Vec<DVector<f64>> {
    match c {
        X => &tr.x,
        Y => &tr.y,
        U => &tr.u,
        A => &tr.a,
        _ => &tr.b,
    }
}

/// Values of the inequality constraints `c ≤ 0` at a candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintValues {
    /// `−g_i(x_k − u_k)`.
    pub endpoint: Vec<f64>,
    /// `‖z_j − z̄(t_j)‖² − (ε/2)²` for `j < k`; empty when localization is off.
    pub node: Vec<f64>,
    /// `Σ ∫ ‖ż − ż̄‖² − ε/2`; `None` when localization is off.
    pub energy: Option<f64>,
}

impl ConstraintValues {
    fn flat(&self) -> Vec<f64> {
        let mut v = self.endpoint.clone();
        v.extend(&self.node);
        v.extend(self.energy);
        v
    }

    /// Largest positive part over all constraints.
    pub fn violation(&self) -> f64 {
        self.flat().into_iter().fold(0.0, |m, c| m.max(c))
    }
}

/// Per-component gradients of a scalar function of the node values.
#[derive(Debug, Clone)]
struct NodeGrads {
    parts: [Vec<DVector<f64>>; 5],
}

impl NodeGrads {
    fn zeros(tr: &Trajectory) -> Self {
        let z = |c: usize| component(tr, c).iter().map(|v| DVector::zeros(v.len())).collect();
        Self { parts: [z(X), z(Y), z(U), z(A), z(B)] }
    }
}

/// `(P_k)`: minimize `J_k` over discrete trajectories near a reference.
#[derive(Clone)]
pub struct DiscreteProblem {
    pub spec: ProblemSpec,
    pub mesh: Mesh,
    pub reference: Arc<dyn Reference>,
    /// Localization radius; `None` disables the localization constraints.
    pub epsilon: Option<f64>,
    /// Feasible starting point built from the reference.
    pub reconstruction: Reconstruction,
    ref_nodes: Vec<Quintuple>,
    /// `∫_{t_j}^{t_{j+1}} ‖ż̄_c‖²` per interval and component.
    ref_energy: Vec<[f64; 5]>,
}

impl std::fmt::Debug for DiscreteProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DiscreteProblem")
            .field("k", &self.mesh.k())
            .field("epsilon", &self.epsilon)
            .field("spec", &self.spec)
            .finish()
    }
}

/// Ten percent of the largest node norm of the reference.
pub fn default_epsilon(reference: &dyn Reference, mesh: &Mesh) -> f64 {
    0.1 * mesh.nodes().iter().map(|&t| reference.value(t).norm()).fold(0.0, f64::max)
}

fn reference_energy(reference: &dyn Reference, lo: f64, hi: f64) -> [f64; 5] {
    let mut cuts: Vec<f64> = reference.breakpoints().into_iter().filter(|&t| t > lo && t < hi).collect();
    cuts.insert(0, lo);
    cuts.push(hi);
    let mut out = [0.0; 5];
    for w in cuts.windows(2) {
        let mut acc = [0.0; 5];
        for (c, slot) in acc.iter_mut().enumerate() {
            *slot = quad::gauss_legendre_composite(w[0], w[1], 5, |t| {
                reference.velocity(t).parts()[c].norm_squared()
            });
        }
        for c in 0..5 {
            out[c] += acc[c];
        }
    }
    out
}

impl DiscreteProblem {
    /// Builds `(P_k)` on a uniform mesh with `k` intervals.
    pub fn build(
        spec: &ProblemSpec,
        reference: Arc<dyn Reference>,
        k: usize,
        epsilon: Option<f64>,
    ) -> Result<Self> {
        spec.validate()?;
        let epsilon = match epsilon {
            Some(e) if e.is_infinite() && e > 0.0 => None,
            Some(e) if !(e > 0.0) => {
                return Err(Error::Build(format!("localization radius {e} must be positive")))
            }
            other => other,
        };
        if (reference.horizon() - spec.horizon).abs() > 1e-12 * spec.horizon.max(1.0) {
            return Err(Error::Build("reference horizon differs from the problem horizon".into()));
        }
        if reference.dims() != (spec.n, spec.m, spec.d) {
            return Err(Error::Build(format!(
                "reference dimensions {:?} differ from problem dimensions {:?}",
                reference.dims(),
                (spec.n, spec.m, spec.d)
            )));
        }
        let mesh = Mesh::uniform(spec.horizon, k).map_err(|e| Error::Build(e.to_string()))?;
        let reconstruction = reconstruct_discrete_feasible(spec, reference.as_ref(), &mesh)
            .map_err(|e| Error::Build(format!("reconstruction failed: {e}")))?;
        let ref_nodes = mesh.nodes().iter().map(|&t| reference.value(t)).collect();
        let ref_energy = (0..k)
            .map(|j| reference_energy(reference.as_ref(), mesh.t(j), mesh.t(j + 1)))
            .collect();
        let problem = Self { spec: spec.clone(), mesh, reference, epsilon, reconstruction, ref_nodes, ref_energy };
        if problem.epsilon.is_some() {
            let cons = problem.constraints(&problem.reconstruction.trajectory)?;
            let viol = cons.node.iter().copied().chain(cons.energy).fold(f64::NEG_INFINITY, f64::max);
            if viol >= 0.0 {
                return Err(Error::Build(format!(
                    "reconstructed trajectory violates the localization constraints by {viol:e}; increase k or epsilon"
                )));
            }
        }
        Ok(problem)
    }

    pub fn k(&self) -> usize {
        self.mesh.k()
    }

    /// Reference value at node `j`.
    pub fn reference_node(&self, j: usize) -> &Quintuple {
        &self.ref_nodes[j]
    }

    /// `Δz̄_c = z̄_c(t_{j+1}) − z̄_c(t_j)`.
    fn ref_increment(&self, j: usize, c: usize) -> DVector<f64> {
        self.ref_nodes[j + 1].parts()[c] - self.ref_nodes[j].parts()[c]
    }

    /// `θ^c_j = ∫_{t_j}^{t_{j+1}} (ż_c − ż̄_c) = (z_{j+1} − z_j) − Δz̄_c`.
    pub fn theta(&self, tr: &Trajectory, j: usize, c: usize) -> DVector<f64> {
        let comp = component(tr, c);
        &comp[j + 1] - &comp[j] - self.ref_increment(j, c)
    }

    /// `∫_{t_j}^{t_{j+1}} ‖s − ż̄_c‖²` with `s` the slope of component `c`.
    fn interval_energy(&self, tr: &Trajectory, j: usize, c: usize) -> f64 {
        let h = self.mesh.h(j);
        let comp = component(tr, c);
        let s = (&comp[j + 1] - &comp[j]) / h;
        h * s.norm_squared() - 2.0 * s.dot(&self.ref_increment(j, c)) + self.ref_energy[j][c]
    }

    /// The five proximity integrals `∫ ‖ż_c − ż̄_c‖²`, `c ∈ (x, y, u, a, b)`.
    pub fn proximity_integrals(&self, tr: &Trajectory) -> [f64; 5] {
        let mut out = [0.0; 5];
        for j in 0..self.k() {
            for (c, slot) in out.iter_mut().enumerate() {
                *slot += self.interval_energy(tr, j, c);
            }
        }
        out
    }

    /// `φ(x_k) + Σ h l(t_j, z_j, slopes_j)`.
    pub fn original_cost(&self, tr: &Trajectory) -> f64 {
        let mut v = self.spec.terminal_cost(&tr.x[self.k()]);
        for j in 0..self.k() {
            let h = self.mesh.h(j);
            let s = tr.slope(j);
            v += h * self.spec.running.value(&tr.x[j], &tr.u[j], &tr.a[j], &tr.b[j], &s.x, &s.u, &s.a, &s.b);
        }
        v
    }

    /// `J_k`: the original cost plus half the proximity integrals.
    pub fn cost(&self, tr: &Trajectory) -> f64 {
        self.original_cost(tr) + 0.5 * self.proximity_integrals(tr).iter().sum::<f64>()
    }

    pub fn constraints(&self, tr: &Trajectory) -> Result<ConstraintValues> {
        let k = self.k();
        let endpoint = self.spec.set.values(&(&tr.x[k] - &tr.u[k]))?.iter().map(|g| -g).collect();
        let (node, energy) = match self.epsilon {
            None => (Vec::new(), None),
            Some(eps) => {
                let r2 = 0.25 * eps * eps;
                let node = (0..k).map(|j| tr.node(j).sub(&self.ref_nodes[j]).norm_squared() - r2).collect();
                let energy = self.proximity_integrals(tr).iter().sum::<f64>() - 0.5 * eps;
                (node, Some(energy))
            }
        };
        Ok(ConstraintValues { endpoint, node, energy })
    }

    fn controlled(&self) -> Vec<(usize, usize)> {
        let s = &self.spec;
        let mut out = Vec::new();
        if s.controlled.u {
            out.push((U, s.n));
        }
        if s.controlled.a && s.m > 0 {
            out.push((A, s.m));
        }
        if s.controlled.b && s.d > 0 {
            out.push((B, s.d));
        }
        out
    }

    fn slopes_per_interval(&self) -> usize {
        self.controlled().iter().map(|&(_, d)| d).sum()
    }

    /// Number of decision variables.
    pub fn dim(&self) -> usize {
        self.k() * self.slopes_per_interval()
    }

    /// Controls with controlled components integrated from `z̄(0)` and the
    /// others pinned to the reference nodes.
    pub fn controls_from_slopes(&self, s: &[f64]) -> ControlSchedule {
        let k = self.k();
        let mut u: Vec<_> = self.ref_nodes.iter().map(|z| z.u.clone()).collect();
        let mut a: Vec<_> = self.ref_nodes.iter().map(|z| z.a.clone()).collect();
        let mut b: Vec<_> = self.ref_nodes.iter().map(|z| z.b.clone()).collect();
        let p = self.slopes_per_interval();
        let mut off = 0;
        for (c, d) in self.controlled() {
            let nodes = match c {
                U => &mut u,
                A => &mut a,
                _ => &mut b,
            };
            for j in 0..k {
                let h = self.mesh.h(j);
                let slope = DVector::from_column_slice(&s[j * p + off..j * p + off + d]);
                nodes[j + 1] = &nodes[j] + slope * h;
            }
            off += d;
        }
        ControlSchedule { mesh: self.mesh.clone(), u, a, b }
    }

    /// Slopes of the controlled components of a schedule.
    pub fn slopes_from_controls(&self, controls: &ControlSchedule) -> Vec<f64> {
        let p = self.slopes_per_interval();
        let mut s = vec![0.0; self.dim()];
        let mut off = 0;
        for (c, d) in self.controlled() {
            let nodes = match c {
                U => &controls.u,
                A => &controls.a,
                _ => &controls.b,
            };
            for j in 0..self.k() {
                let slope = (&nodes[j + 1] - &nodes[j]) / self.mesh.h(j);
                s[j * p + off..j * p + off + d].copy_from_slice(slope.as_slice());
            }
            off += d;
        }
        s
    }

    /// Catching-up trajectory under the given controls, with the projections.
    pub fn forward(&self, controls: &ControlSchedule) -> Result<(Trajectory, Vec<Projection>)> {
        let spec = &self.spec;
        let k = self.k();
        let mut x = Vec::with_capacity(k + 1);
        let mut y = Vec::with_capacity(k + 1);
        x.push(spec.x0.clone());
        y.push(DVector::zeros(spec.n));
        let mut projections = Vec::with_capacity(k);
        for j in 0..k {
            let h = self.mesh.h(j);
            let f2 = spec.f2.eval(&controls.b[j], &x[j]);
            let y_next = &y[j] + f2 * h;
            let f1 = spec.f1.eval(&controls.a[j], &x[j]);
            let pre = &x[j] - (f1 + &y_next) * h;
            if pre.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { what: "catching-up step", node: j });
            }
            let proj = geometry::project(&spec.set, &controls.u[j + 1], &pre)?;
            x.push(proj.point.clone());
            y.push(y_next);
            projections.push(proj);
        }
        let tr = Trajectory {
            mesh: self.mesh.clone(),
            x,
            y,
            u: controls.u.clone(),
            a: controls.a.clone(),
            b: controls.b.clone(),
        };
        Ok((tr, projections))
    }

    /// Explicit partial gradients of `J_k` plus the augmented terms.
    fn objective_with_grads(&self, tr: &Trajectory, al: &AugmentedState) -> Result<(f64, NodeGrads)> {
        let k = self.k();
        let spec = &self.spec;
        let mut g = NodeGrads::zeros(tr);
        let mut value = spec.terminal_cost(&tr.x[k]);
        g.parts[X][k] += spec.terminal.gradient(&tr.x[k]);
        for j in 0..k {
            let h = self.mesh.h(j);
            let s = tr.slope(j);
            let r = &spec.running;
            value += h * r.value(&tr.x[j], &tr.u[j], &tr.a[j], &tr.b[j], &s.x, &s.u, &s.a, &s.b);
            let cg = r.gradient(&tr.x[j], &tr.u[j], &tr.a[j], &tr.b[j], &s.x, &s.u, &s.a, &s.b);
            for (c, w, v) in [(X, &cg.wx, &cg.vx), (U, &cg.wu, &cg.vu), (A, &cg.wa, &cg.va), (B, &cg.wb, &cg.vb)] {
                g.parts[c][j] += w * h - v;
                g.parts[c][j + 1] += v;
            }
        }
        // Proximity penalties: d/dz_{j+1} of ½∫‖s − ż̄‖² is θ/h.
        let mut energy = 0.0;
        let mut thetas: Vec<[DVector<f64>; 5]> = Vec::with_capacity(k);
        for j in 0..k {
            let h = self.mesh.h(j);
            let th: [DVector<f64>; 5] = std::array::from_fn(|c| self.theta(tr, j, c));
            for c in 0..5 {
                energy += self.interval_energy(tr, j, c);
                g.parts[c][j + 1] += &th[c] / h;
                g.parts[c][j] -= &th[c] / h;
            }
            thetas.push(th);
        }
        value += 0.5 * energy;

        // Augmented Lagrangian terms ψ(c) = (max(0, μ + ρc)² − μ²) / (2ρ).
        let cons = self.constraints(tr)?;
        let flat = cons.flat();
        let rho = al.rho;
        let mut weights = Vec::with_capacity(flat.len());
        for (i, &c) in flat.iter().enumerate() {
            let mu = al.mu.get(i).copied().unwrap_or(0.0);
            let shifted = (mu + rho * c).max(0.0);
            value += (shifted * shifted - mu * mu) / (2.0 * rho);
            weights.push(shifted);
        }
        let s = spec.set.len();
        if s > 0 {
            let grads = spec.set.gradients(&(&tr.x[k] - &tr.u[k]));
            for i in 0..s {
                if weights[i] != 0.0 {
                    let gi = grads.column(i).into_owned() * weights[i];
                    g.parts[X][k] -= &gi;
                    g.parts[U][k] += &gi;
                }
            }
        }
        if self.epsilon.is_some() {
            for j in 0..k {
                let w = weights[s + j];
                if w != 0.0 {
                    let diff = tr.node(j).sub(&self.ref_nodes[j]);
                    for (c, d) in diff.parts().iter().enumerate() {
                        g.parts[c][j] += *d * (2.0 * w);
                    }
                }
            }
            let w = weights[s + k];
            if w != 0.0 {
                for (j, th) in thetas.iter().enumerate() {
                    let h = self.mesh.h(j);
                    for c in 0..5 {
                        g.parts[c][j + 1] += &th[c] * (2.0 * w / h);
                        g.parts[c][j] -= &th[c] * (2.0 * w / h);
                    }
                }
            }
        }
        Ok((value, g))
    }

    /// Augmented objective and its exact gradient with respect to the slopes.
    fn value_and_adjoint_gradient(&self, s: &[f64], al: &AugmentedState) -> Result<(f64, Vec<f64>)> {
        let controls = self.controls_from_slopes(s);
        let (tr, projections) = self.forward(&controls)?;
        let (value, mut g) = self.objective_with_grads(&tr, al)?;
        let spec = &self.spec;
        for j in (0..self.k()).rev() {
            let h = self.mesh.h(j);
            let p = projections[j].jacobian(&spec.set, &tr.u[j + 1]);
            let gx_next = g.parts[X][j + 1].clone();
            let gq = p.transpose() * &gx_next;
            g.parts[U][j + 1] += &gx_next - &gq;
            g.parts[Y][j + 1] -= &gq * h;
            let gy_next = g.parts[Y][j + 1].clone();
            g.parts[Y][j] += &gy_next;
            let j2x = spec.f2.jac_x(&tr.b[j], &tr.x[j]);
            let j2b = spec.f2.jac_c(&tr.b[j], &tr.x[j]);
            let j1x = spec.f1.jac_x(&tr.a[j], &tr.x[j]);
            let j1a = spec.f1.jac_c(&tr.a[j], &tr.x[j]);
            let gx = j2x.transpose() * &gy_next * h + &gq - j1x.transpose() * &gq * h;
            g.parts[X][j] += gx;
            g.parts[B][j] += j2b.transpose() * &gy_next * h;
            g.parts[A][j] -= j1a.transpose() * &gq * h;
        }
        let p = self.slopes_per_interval();
        let mut grad = vec![0.0; self.dim()];
        let mut off = 0;
        for (c, d) in self.controlled() {
            // c_{j} = c_0 + Σ_{i<j} h_i s_i, so ∂/∂s_i = h_i Σ_{j>i} g_j.
            let mut suffix = DVector::zeros(d);
            for i in (0..self.k()).rev() {
                suffix += &g.parts[c][i + 1];
                let gi = &suffix * self.mesh.h(i);
                grad[i * p + off..i * p + off + d].copy_from_slice(gi.as_slice());
            }
            off += d;
        }
        Ok((value, grad))
    }

    fn augmented_value(&self, s: &[f64], al: &AugmentedState) -> Result<f64> {
        let (tr, _) = self.forward(&self.controls_from_slopes(s))?;
        let mut v = self.cost(&tr);
        for (i, c) in self.constraints(&tr)?.flat().into_iter().enumerate() {
            let mu = al.mu.get(i).copied().unwrap_or(0.0);
            let shifted = (mu + al.rho * c).max(0.0);
            v += (shifted * shifted - mu * mu) / (2.0 * al.rho);
        }
        Ok(v)
    }

    fn value_and_gradient(
        &self,
        s: &[f64],
        al: &AugmentedState,
        opts: &SolveOptions,
    ) -> Result<(f64, Vec<f64>)> {
        match opts.gradient {
            GradientMode::Adjoint => self.value_and_adjoint_gradient(s, al),
            GradientMode::Forward | GradientMode::Central => {
                let f0 = self.augmented_value(s, al)?;
                let central = opts.gradient == GradientMode::Central;
                let grad: Result<Vec<f64>> = (0..s.len())
                    .into_par_iter()
                    .map(|i| {
                        let step = opts.fd_step * (1.0 + s[i].abs());
                        let mut sp = s.to_vec();
                        sp[i] += step;
                        let fp = self.augmented_value(&sp, al)?;
                        if central {
                            sp[i] = s[i] - step;
                            let fm = self.augmented_value(&sp, al)?;
                            Ok((fp - fm) / (2.0 * step))
                        } else {
                            Ok((fp - f0) / step)
                        }
                    })
                    .collect();
                Ok((f0, grad?))
            }
        }
    }

    /// Evaluates `J_k` and the constraints at the trajectory generated by `s`.
    pub fn evaluate(&self, s: &[f64]) -> Result<(Trajectory, f64, ConstraintValues)> {
        let (tr, _) = self.forward(&self.controls_from_slopes(s))?;
        let cost = self.cost(&tr);
        let cons = self.constraints(&tr)?;
        Ok((tr, cost, cons))
    }
}

#[derive(Debug, Clone)]
struct AugmentedState {
    mu: Vec<f64>,
    rho: f64,
}

/// How the solver differentiates the reduced objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GradientMode {
    /// Exact discrete adjoint through the projection Jacobians.
    Adjoint,
    /// Forward differences, columns evaluated in parallel.
    Forward,
    /// Central differences, columns evaluated in parallel.
    Central,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    /// Gradient-norm tolerance of the inner minimization.
    pub tol: f64,
    /// Inner iteration cap per outer iteration.
    pub max_iterations: usize,
    pub max_outer: usize,
    /// Constraint violation accepted as feasible.
    pub feasibility_tol: f64,
    pub gradient: GradientMode,
    /// Relative finite-difference step.
    pub fd_step: f64,
    pub initial_penalty: f64,
    pub penalty_growth: f64,
    pub penalty_cap: f64,
    pub memory: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            tol: 1e-7,
            max_iterations: 2000,
            max_outer: 8,
            feasibility_tol: 1e-8,
            gradient: GradientMode::Adjoint,
            fd_step: 1e-6,
            initial_penalty: 1.0,
            penalty_growth: 10.0,
            penalty_cap: 1e8,
            memory: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SolveStatus {
    Converged,
    MaxIterations,
    /// The line search could not decrease the objective; the message
    /// carries the gradient norm and step history.
    LineSearchFailed(String),
}

impl SolveStatus {
    pub fn is_converged(&self) -> bool {
        matches!(self, Self::Converged)
    }
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub solution: Trajectory,
    /// `J_k` at the solution.
    pub cost: f64,
    /// `φ(x_k) + Σ h l` without the proximity integrals.
    pub original_cost: f64,
    pub iterations: usize,
    pub outer_iterations: usize,
    pub gradient_norm: f64,
    pub constraint_violation: f64,
    /// Whether the node and energy localization constraints are active.
    pub localization_active: [bool; 2],
    /// Constraint violation after each outer iteration.
    pub infeasibility_history: Vec<f64>,
    pub status: SolveStatus,
}

struct InnerResult {
    x: Vec<f64>,
    value: f64,
    grad_norm: f64,
    iterations: usize,
    status: SolveStatus,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn lbfgs(
    mut f: impl FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
    x0: Vec<f64>,
    tol: f64,
    max_iter: usize,
    memory: usize,
) -> Result<InnerResult> {
    let mut x = x0;
    let (mut fx, mut g) = f(&x)?;
    let mut hist: std::collections::VecDeque<(Vec<f64>, Vec<f64>, f64)> = Default::default();
    let mut status = SolveStatus::MaxIterations;
    let mut it = 0;
    while it < max_iter {
        let gn = dot(&g, &g).sqrt();
        if gn <= tol {
            status = SolveStatus::Converged;
            break;
        }
        // Two-loop recursion.
        let mut q = g.clone();
        let mut alphas = Vec::with_capacity(hist.len());
        for (s, y, r) in hist.iter().rev() {
            let a = r * dot(s, &q);
            q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
            alphas.push(a);
        }
        let gamma = hist.back().map_or(1.0 / gn.max(1.0), |(s, y, _)| dot(s, y) / dot(y, y));
        q.iter_mut().for_each(|v| *v *= gamma);
        for ((s, y, r), a) in hist.iter().zip(alphas.iter().rev()) {
            let b = r * dot(y, &q);
            q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
        }
        let mut d: Vec<f64> = q.iter().map(|v| -v).collect();
        let mut slope = dot(&g, &d);
        if !(slope < 0.0) {
            hist.clear();
            d = g.iter().map(|v| -v / gn.max(1.0)).collect();
            slope = dot(&g, &d);
        }
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..50 {
            let xn: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + step * di).collect();
            match f(&xn) {
                Ok((fnew, gnew)) if fnew.is_finite() && fnew <= fx + 1e-4 * step * slope => {
                    accepted = Some((xn, fnew, gnew));
                    break;
                }
                _ => step *= 0.5,
            }
        }
        it += 1;
        let Some((xn, fnew, gnew)) = accepted else {
            if hist.is_empty() {
                status = SolveStatus::LineSearchFailed(format!(
                    "no decrease along steepest descent at gradient norm {gn:e}"
                ));
                break;
            }
            hist.clear();
            continue;
        };
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gnew.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() {
            if hist.len() == memory {
                hist.pop_front();
            }
            hist.push_back((s, y, 1.0 / sy));
        }
        let stalled = (fx - fnew).abs() <= 1e-15 * (1.0 + fx.abs());
        x = xn;
        fx = fnew;
        g = gnew;
        if stalled && dot(&g, &g).sqrt() <= tol.sqrt() {
            status = SolveStatus::Converged;
            break;
        }
    }
    let grad_norm = dot(&g, &g).sqrt();
    if grad_norm <= tol {
        status = SolveStatus::Converged;
    }
    Ok(InnerResult { x, value: fx, grad_norm, iterations: it, status })
}

/// Minimizes `J_k` by an augmented Lagrangian outer loop over L-BFGS inner solves.
pub fn solve(problem: &DiscreteProblem, options: &SolveOptions) -> Result<SolveReport> {
    solve_from(problem, &problem.slopes_from_controls(&ControlSchedule {
        mesh: problem.mesh.clone(),
        u: problem.reconstruction.trajectory.u.clone(),
        a: problem.reconstruction.trajectory.a.clone(),
        b: problem.reconstruction.trajectory.b.clone(),
    }), options)
}

/// [`solve`] started from the given slopes.
pub fn solve_from(problem: &DiscreteProblem, start: &[f64], options: &SolveOptions) -> Result<SolveReport> {
    if start.len() != problem.dim() {
        return Err(Error::Dimension(format!(
            "start has {} slopes, problem has {}",
            start.len(),
            problem.dim()
        )));
    }
    let (tr0, _, cons0) = problem.evaluate(start)?;
    drop(tr0);
    let mut al = AugmentedState { mu: vec![0.0; cons0.flat().len()], rho: options.initial_penalty };
    let mut s = start.to_vec();
    let mut history = Vec::new();
    let mut iterations = 0;
    let mut outer = 0;
    let mut last = None;
    while outer < options.max_outer {
        outer += 1;
        let inner = lbfgs(
            |v| problem.value_and_gradient(v, &al, options),
            s.clone(),
            options.tol,
            options.max_iterations,
            options.memory,
        )?;
        iterations += inner.iterations;
        s = inner.x.clone();
        let (_, _, cons) = problem.evaluate(&s)?;
        let viol = cons.violation();
        history.push(viol);
        for (m, c) in al.mu.iter_mut().zip(cons.flat()) {
            *m = (*m + al.rho * c).max(0.0);
        }
        let done = viol <= options.feasibility_tol;
        let failed = matches!(inner.status, SolveStatus::LineSearchFailed(_));
        last = Some(inner);
        if done || failed {
            break;
        }
        al.rho = (al.rho * options.penalty_growth).min(options.penalty_cap);
    }
    let inner = last.expect("at least one outer iteration");
    let (solution, cost, cons) = problem.evaluate(&s)?;
    let violation = cons.violation();
    let active = |c: f64, scale: f64| c >= -1e-6 * scale.max(1e-12);
    let localization_active = match problem.epsilon {
        None => [false, false],
        Some(eps) => [
            cons.node.iter().any(|&c| active(c, 0.25 * eps * eps)),
            cons.energy.is_some_and(|c| active(c, 0.5 * eps)),
        ],
    };
    let status = match inner.status {
        SolveStatus::Converged if violation > options.feasibility_tol => SolveStatus::MaxIterations,
        other => other,
    };
    let _ = inner.value;
    Ok(SolveReport {
        original_cost: problem.original_cost(&solution),
        solution,
        cost,
        iterations,
        outer_iterations: outer,
        gradient_norm: inner.grad_norm,
        constraint_violation: violation,
        localization_active,
        infeasibility_history: history,
        status,
    })
}

/// One row of a convergence study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub k: usize,
    pub cost: Option<f64>,
    pub original_cost: Option<f64>,
    pub w12_sup: Option<f64>,
    pub w12_l2: Option<f64>,
    pub status: String,
    pub error: Option<String>,
}

/// Builds and solves `(P_k)` for each `k` and measures the distance of the
/// solution to the reference. Failures are recorded per row.
pub fn convergence_study(
    spec: &ProblemSpec,
    reference: Arc<dyn Reference>,
    ks: &[usize],
    epsilon: Option<f64>,
    options: &SolveOptions,
) -> Result<Vec<StudyRow>> {
    if ks.is_empty() || ks.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Domain("mesh sizes must be nonempty and strictly increasing".into()));
    }
    let rows = ks
        .par_iter()
        .map(|&k| {
            let run = || -> Result<(SolveReport, W12Distance)> {
                let problem = DiscreteProblem::build(spec, reference.clone(), k, epsilon)?;
                let report = solve(&problem, options)?;
                let dist = w12_distance(&report.solution, reference.as_ref())?;
                Ok((report, dist))
            };
            match run() {
                Ok((r, d)) => StudyRow {
                    k,
                    cost: Some(r.cost),
                    original_cost: Some(r.original_cost),
                    w12_sup: Some(d.sup_norm),
                    w12_l2: Some(d.l2_derivative),
                    status: format!("{:?}", r.status),
                    error: None,
                },
                Err(e) => StudyRow {
                    k,
                    cost: None,
                    original_cost: None,
                    w12_sup: None,
                    w12_l2: None,
                    status: "failed".into(),
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    Ok(rows)
}

/// Writes study rows as CSV with a header.
pub fn write_study_csv<W: Write>(rows: &[StudyRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuits::{example83_analytic, example83_spec, Example83Case};
    use crate::dynamics::{ControlMask, GrowthConstants, LinearField, QuadraticCost, RunningCost};
    use crate::geometry::MovingSet;
    use nalgebra::DMatrix;

    fn case_iii() -> Arc<dyn Reference> {
        Arc::new(example83_analytic(Example83Case::III, 1.0))
    }

    #[test]
    fn initial_cost_matches_mode_three() {
        let p = DiscreteProblem::build(&example83_spec(), case_iii(), 100, Some(0.5)).unwrap();
        let s = p.slopes_from_controls(&ControlSchedule::from_reference(case_iii().as_ref(), &p.mesh));
        let (_, cost, cons) = p.evaluate(&s).unwrap();
        assert!((cost - 1.0).abs() < 1e-2, "{cost}");
        assert!(cons.violation() <= 1e-12);
    }

    #[test]
    fn structure_and_disabled_localization() {
        let p = DiscreteProblem::build(&example83_spec(), case_iii(), 1, None).unwrap();
        assert_eq!(p.k(), 1);
        assert_eq!(p.dim(), 2);
        let c = p.constraints(&p.reconstruction.trajectory).unwrap();
        assert!(c.node.is_empty() && c.energy.is_none());
        let p = DiscreteProblem::build(&example83_spec(), case_iii(), 4, Some(f64::INFINITY)).unwrap();
        assert!(p.epsilon.is_none());
        assert!(DiscreteProblem::build(&example83_spec(), case_iii(), 4, Some(0.0)).is_err());
    }

    #[test]
    fn proximity_integrals_vanish_on_reference_itself() {
        let spec = example83_spec();
        let base = DiscreteProblem::build(&spec, case_iii(), 8, None).unwrap();
        let (tr, _) = base.forward(&ControlSchedule::from_reference(case_iii().as_ref(), &base.mesh)).unwrap();
        let p = DiscreteProblem::build(&spec, Arc::new(tr.clone()), 8, None).unwrap();
        for v in p.proximity_integrals(&tr) {
            assert!(v.abs() < 1e-14, "{v}");
        }
    }

    fn adjoint_vs_central(problem: &DiscreteProblem, s: &[f64], mu: Vec<f64>, rho: f64) {
        let al = AugmentedState { mu, rho };
        let (_, g) = problem.value_and_adjoint_gradient(s, &al).unwrap();
        for i in 0..s.len() {
            let step = 1e-6;
            let mut sp = s.to_vec();
            sp[i] += step;
            let fp = problem.augmented_value(&sp, &al).unwrap();
            sp[i] -= 2.0 * step;
            let fm = problem.augmented_value(&sp, &al).unwrap();
            let fd = (fp - fm) / (2.0 * step);
            assert!((fd - g[i]).abs() < 1e-6 * (1.0 + fd.abs()), "i={i}: adjoint {} vs fd {fd}", g[i]);
        }
    }

    #[test]
    fn adjoint_gradient_matches_differences_on_circuit() {
        let r: Arc<dyn Reference> = Arc::new(example83_analytic(Example83Case::I, 0.7));
        let p = DiscreteProblem::build(&example83_spec(), r.clone(), 6, Some(2.0)).unwrap();
        let mut s = p.slopes_from_controls(&ControlSchedule::from_reference(r.as_ref(), &p.mesh));
        s.iter_mut().enumerate().for_each(|(i, v)| *v += 0.05 * (i as f64).sin());
        let ncons = p.spec.set.len() + p.k() + 1;
        adjoint_vs_central(&p, &s, vec![0.3; ncons], 5.0);
    }

    #[test]
    fn adjoint_gradient_matches_differences_with_active_moving_set() {
        // Controlled moving orthant and kernel control, with a state that hits the boundary.
        let n = 2;
        let spec = ProblemSpec {
            set: MovingSet::orthant(n),
            n,
            m: 1,
            d: 1,
            f1: Arc::new(LinearField {
                control: DMatrix::from_row_slice(2, 1, &[1.0, 0.5]),
                state: DMatrix::from_row_slice(2, 2, &[0.2, 0.1, 0.0, 0.3]),
                offset: DVector::from_column_slice(&[2.0, 0.0]),
            }),
            f2: Arc::new(LinearField::new(DMatrix::from_row_slice(2, 1, &[0.4, 1.0]), DMatrix::identity(2, 2))),
            growth: GrowthConstants::default(),
            terminal: QuadraticCost::diagonal(&[1.0, 2.0], DVector::from_column_slice(&[0.5, 0.1])),
            running: RunningCost {
                state: Some(QuadraticCost::new(DMatrix::identity(6, 6) * 0.3, DVector::zeros(6))),
                u_rate: Some(QuadraticCost::diagonal(&[0.5, 0.5], DVector::zeros(2))),
                ..RunningCost::zero()
            },
            horizon: 1.0,
            x0: DVector::from_column_slice(&[0.3, 0.4]),
            controlled: ControlMask::default(),
        };
        let mesh = Mesh::uniform(1.0, 5).unwrap();
        let zero = |d| DVector::zeros(d);
        let sched = ControlSchedule::constant(&mesh, zero(2), DVector::from_element(1, 0.1), zero(1));
        let sim = crate::dynamics::simulate(&spec, &sched).unwrap();
        let reference: Arc<dyn Reference> = Arc::new(sim.trajectory.clone());
        let p = DiscreteProblem::build(&spec, reference, 5, None).unwrap();
        let mut s = p.slopes_from_controls(&sched);
        s.iter_mut().enumerate().for_each(|(i, v)| *v += 0.03 * ((i * 7) as f64).cos());
        let (tr, _) = p.forward(&p.controls_from_slopes(&s)).unwrap();
        assert!((1..=5).any(|j| (&tr.x[j] - &tr.u[j]).min() < 1e-9));
        adjoint_vs_central(&p, &s, vec![0.2; 2], 3.0);
    }

    #[test]
    fn stationary_instance_has_zero_cost() {
        let n = 2;
        let x0 = DVector::from_column_slice(&[1.0, 2.0]);
        let spec = ProblemSpec {
            set: MovingSet::orthant(n),
            n,
            m: 1,
            d: 1,
            f1: Arc::new(LinearField::new(DMatrix::zeros(2, 1), DMatrix::zeros(2, 2))),
            f2: Arc::new(LinearField::new(DMatrix::zeros(2, 1), DMatrix::zeros(2, 2))),
            growth: GrowthConstants::default(),
            terminal: QuadraticCost::new(DMatrix::identity(2, 2) * 2.0, x0.clone()),
            running: RunningCost {
                u_rate: Some(QuadraticCost::new(DMatrix::identity(2, 2) * 2.0, DVector::zeros(2))),
                a_rate: Some(QuadraticCost::new(DMatrix::identity(1, 1) * 2.0, DVector::zeros(1))),
                b_rate: Some(QuadraticCost::new(DMatrix::identity(1, 1) * 2.0, DVector::zeros(1))),
                ..RunningCost::zero()
            },
            horizon: 1.0,
            x0: x0.clone(),
            controlled: ControlMask::default(),
        };
        let mesh = Mesh::uniform(1.0, 10).unwrap();
        let sched = ControlSchedule::constant(&mesh, DVector::zeros(2), DVector::zeros(1), DVector::zeros(1));
        let sim = crate::dynamics::simulate(&spec, &sched).unwrap();
        let p = DiscreteProblem::build(&spec, Arc::new(sim.trajectory), 10, None).unwrap();
        let r = solve(&p, &SolveOptions::default()).unwrap();
        assert!(r.cost.abs() < 1e-12, "{}", r.cost);
        assert!(r.solution.x.iter().all(|x| (x - &x0).norm() < 1e-12));
        assert!(r.solution.a.iter().all(|a| a.norm() < 1e-12));
    }

    #[test]
    fn matches_discrete_lq_solution() {
        // ẋ = a on ℝ, φ = ½(x_k − 1)², l = ½a², zero reference.
        let k = 8;
        let h = 1.0 / k as f64;
        let spec = ProblemSpec {
            set: MovingSet::free(1),
            n: 1,
            m: 1,
            d: 0,
            f1: Arc::new(LinearField::control_only(DMatrix::from_element(1, 1, -1.0))),
            f2: Arc::new(LinearField::state_only(DMatrix::zeros(1, 1))),
            growth: GrowthConstants::default(),
            terminal: QuadraticCost::diagonal(&[1.0], DVector::from_element(1, 1.0)),
            running: RunningCost {
                state: Some(QuadraticCost::diagonal(&[0.0, 0.0, 1.0], DVector::zeros(3))),
                ..RunningCost::zero()
            },
            horizon: 1.0,
            x0: DVector::zeros(1),
            controlled: ControlMask { u: false, a: true, b: false },
        };
        let mesh = Mesh::uniform(1.0, k).unwrap();
        let zero_ref = Trajectory {
            mesh: mesh.clone(),
            x: vec![DVector::zeros(1); k + 1],
            y: vec![DVector::zeros(1); k + 1],
            u: vec![DVector::zeros(1); k + 1],
            a: vec![DVector::zeros(1); k + 1],
            b: vec![DVector::zeros(0); k + 1],
        };
        let p = DiscreteProblem::build(&spec, Arc::new(zero_ref), k, None).unwrap();
        let r = solve(&p, &SolveOptions { tol: 1e-10, ..Default::default() }).unwrap();

        // Oracle: J is quadratic in the slopes σ. a_j = h Σ_{i<j} σ_i and
        // x_j = h Σ_{i<j} a_i; build the linear maps and solve the normal equations.
        let amap = DMatrix::from_fn(k + 1, k, |j, i| if i < j { h } else { 0.0 });
        let xmap = DMatrix::from_fn(k + 1, k + 1, |j, i| if i < j { h } else { 0.0 }) * &amap;
        let dx = DMatrix::from_fn(k, k + 1, |j, i| {
            if i == j + 1 {
                1.0 / h
            } else if i == j {
                -1.0 / h
            } else {
                0.0
            }
        });
        let xk = xmap.row(k).clone_owned();
        let a_first = amap.rows(0, k).clone_owned();
        let xslope = &dx * &xmap;
        let hess = xk.transpose() * &xk
            + a_first.transpose() * &a_first * h
            + xslope.transpose() * &xslope * h
            + DMatrix::identity(k, k) * h;
        let rhs = xk.transpose();
        let sigma = hess.lu().solve(&rhs).unwrap();
        let xs = &xmap * &sigma;
        for j in 0..=k {
            assert!((r.solution.x[j][0] - xs[j]).abs() < 1e-4, "j={j}");
        }
        let oracle_cost = 0.5 * (xs[k] - 1.0).powi(2)
            + 0.5 * h * (&a_first * &sigma).norm_squared()
            + 0.5 * h * (&xslope * &sigma).norm_squared()
            + 0.5 * h * sigma.norm_squared();
        assert!((r.cost - oracle_cost).abs() < 1e-8);
    }

    #[test]
    fn study_rejects_unsorted_ks_and_emits_rows() {
        let spec = example83_spec();
        assert!(convergence_study(&spec, case_iii(), &[4, 2], None, &SolveOptions::default()).is_err());
        let rows = convergence_study(&spec, case_iii(), &[4], None, &SolveOptions::default()).unwrap();
        assert_eq!(rows.len(), 1);
        let mut buf = Vec::new();
        write_study_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(text.starts_with("k,cost,original_cost,w12_sup,w12_l2,status,error"));
    }
}
