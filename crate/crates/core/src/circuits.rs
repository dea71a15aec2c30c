//! RLCD circuit instances with ideal diodes and the analytic three-mode
//! solution family of the two-dimensional voltage-source benchmark.

use std::f64::consts::{E, SQRT_2};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dynamics::{
    ControlMask, ControlSchedule, GrowthConstants, LinearField, Mesh, ProblemSpec, QuadraticCost,
    Quintuple, Reference, RunningCost,
};
use crate::error::{Error, Result};
use crate::geometry::MovingSet;

/// Component values and cost weights. The voltage-source circuit reads
/// `l1, l2` as its inductors and `c1` as its capacitor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CircuitParams {
    pub r1: f64,
    pub r2: f64,
    pub l1: f64,
    pub l2: f64,
    pub c1: f64,
    pub c2: f64,
    pub horizon: f64,
    pub lambda_t: f64,
    pub lambda_p: f64,
    pub lambda_i: f64,
}

impl Default for CircuitParams {
    fn default() -> Self {
        Self {
            r1: 0.0,
            r2: 0.0,
            l1: 1.0,
            l2: 1.0,
            c1: 1.0,
            c2: 1.0,
            horizon: 1.0,
            lambda_t: 1.0,
            lambda_p: 0.0,
            lambda_i: 0.0,
        }
    }
}

impl CircuitParams {
    fn validate_common(&self) -> Result<()> {
        let bad = |name: &str, v: f64| Error::InvalidConstants(format!("{name} = {v}"));
        for (name, v) in [("R1", self.r1), ("R2", self.r2)] {
            if !(v >= 0.0) {
                return Err(bad(name, v));
            }
        }
        if !(self.horizon > 0.0) {
            return Err(bad("T", self.horizon));
        }
        Ok(())
    }
}

/// Current-source instance: the source profile `i` enters the moving set as
/// `u = (i, 0)` and the memory kernel as `b = (i / (L₁C₁), 0)`.
#[derive(Debug, Clone)]
pub struct CurrentSourceInstance {
    pub spec: ProblemSpec,
    /// `1 / (L₁C₁)`, the factor linking `b₁` to `i`.
    pub kernel_gain: f64,
}

impl CurrentSourceInstance {
    /// Node values of `u` and `b` derived from a source profile.
    pub fn schedule(&self, mesh: &Mesh, current: impl Fn(f64) -> f64) -> ControlSchedule {
        let mut u = Vec::with_capacity(mesh.k() + 1);
        let mut b = Vec::with_capacity(mesh.k() + 1);
        for &t in mesh.nodes() {
            let i = current(t);
            u.push(DVector::from_column_slice(&[i, 0.0]));
            b.push(DVector::from_column_slice(&[self.kernel_gain * i, 0.0]));
        }
        let a = vec![DVector::zeros(0); mesh.k() + 1];
        ControlSchedule { mesh: mesh.clone(), u, a, b }
    }
}

/// Builds the current-source circuit for a source with initial value `i0`.
pub fn current_source_instance(params: &CircuitParams, i0: f64) -> Result<CurrentSourceInstance> {
    params.validate_common()?;
    let p = params;
    for (name, v) in [("C1", p.c1), ("C2", p.c2)] {
        if !(v > 0.0) {
            return Err(Error::InvalidConstants(format!("{name} = {v} must be positive")));
        }
    }
    for (name, v) in [("L1", p.l1), ("L2", p.l2)] {
        if !(v > 0.0) {
            return Err(Error::InvalidConstants(format!("{name} = {v} divides a nonzero coefficient")));
        }
    }
    let weights = [p.lambda_t, p.lambda_p, p.lambda_i];
    if weights.iter().any(|&w| !(w >= 0.0)) || weights.iter().sum::<f64>() <= 0.0 {
        return Err(Error::InvalidConstants("cost weights must be nonnegative and not all zero".into()));
    }
    let rs = p.r1 + p.r2;
    let a1 = DMatrix::from_row_slice(2, 2, &[rs / p.l1, -p.r2 / p.l1, -p.r2 / p.l2, rs / p.l2]);
    let a2 = DMatrix::from_diagonal(&DVector::from_column_slice(&[1.0 / (p.l1 * p.c1), 1.0 / (p.l2 * p.c2)]));
    let growth = GrowthConstants {
        l: a1.norm(),
        l1: a2.norm().max(1.0),
        l2: a2.norm().max(1.0),
        alpha1: a1.norm(),
        alpha2: a2.norm(),
    };
    let target = DVector::from_column_slice(&[i0, 0.0]);
    let terminal = QuadraticCost::diagonal(&[p.lambda_t, 0.0], target);
    let mut running = RunningCost::zero();
    if p.lambda_p > 0.0 || p.lambda_i > 0.0 {
        // Stacked (x, u, b) of dimension 6.
        let mut stacked_target = DVector::zeros(6);
        stacked_target[0] = i0;
        running.state = Some(QuadraticCost::diagonal(
            &[p.lambda_p, 0.0, 0.0, 0.0, p.lambda_i, 0.0],
            stacked_target,
        ));
    }
    let spec = ProblemSpec {
        set: MovingSet::orthant(2),
        n: 2,
        m: 0,
        d: 2,
        f1: Arc::new(LinearField::state_only(a1)),
        f2: Arc::new(LinearField::new(DMatrix::identity(2, 2), a2)),
        growth,
        terminal,
        running,
        horizon: p.horizon,
        x0: DVector::from_column_slice(&[i0, 0.0]),
        controlled: ControlMask { u: false, a: false, b: false },
    };
    Ok(CurrentSourceInstance { spec, kernel_gain: 1.0 / (p.l1 * p.c1) })
}

/// Voltage-source circuit on the fixed orthant with the source voltages as
/// drift controls and cost `x₂(T)²/2 + ½∫‖a‖²`.
pub fn voltage_source_instance(params: &CircuitParams, x0: DVector<f64>) -> Result<ProblemSpec> {
    params.validate_common()?;
    let p = params;
    for (name, v) in [("L1", p.l1), ("L2", p.l2), ("C", p.c1)] {
        if !(v > 0.0) {
            return Err(Error::InvalidConstants(format!("{name} = {v} must be positive")));
        }
    }
    if x0.len() != 2 {
        return Err(Error::Dimension(format!("x0 has length {}, expected 2", x0.len())));
    }
    let a1 = DMatrix::from_diagonal(&DVector::from_column_slice(&[-1.0 / p.l1, -1.0 / p.l2]));
    let k1 = 1.0 / (p.l1 * p.c1);
    let k2 = 1.0 / (p.l2 * p.c1);
    let a2 = DMatrix::from_row_slice(2, 2, &[k1, -k1, -k2, k2]);
    let a2_norm = a2.clone().svd(false, false).singular_values.max();
    let growth = GrowthConstants {
        l: a1.abs().max(),
        l1: a2_norm,
        l2: a2_norm,
        alpha1: 0.0,
        alpha2: a2_norm,
    };
    let running = RunningCost {
        state: Some(QuadraticCost::diagonal(&[0.0, 0.0, 0.0, 0.0, 1.0, 1.0], DVector::zeros(6))),
        ..RunningCost::zero()
    };
    Ok(ProblemSpec {
        set: MovingSet::orthant(2),
        n: 2,
        m: 2,
        d: 0,
        f1: Arc::new(LinearField::control_only(a1)),
        f2: Arc::new(LinearField::state_only(a2)),
        growth,
        terminal: QuadraticCost::diagonal(&[0.0, 1.0], DVector::zeros(2)),
        running,
        horizon: p.horizon,
        x0,
        controlled: ControlMask { u: false, a: true, b: false },
    })
}

/// The benchmark: unit components, `T = 1`, `x₀ = (1, 1)`.
pub fn example83_spec() -> ProblemSpec {
    voltage_source_instance(&CircuitParams::default(), DVector::from_column_slice(&[1.0, 1.0]))
        .expect("unit parameters are valid")
}

/// Terminal diode configuration of an analytic mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Example83Case {
    /// `x₁(1) = 0`, `x₂(1) > 0`.
    I,
    /// `x₁(1) > 0`, `x₂(1) = 0`.
    II,
    /// `x₁(1) = x₂(1) = 0`.
    III,
}

impl Example83Case {
    pub const ALL: [Example83Case; 3] = [Self::I, Self::II, Self::III];

    pub fn name(self) -> &'static str {
        match self {
            Self::I => "i",
            Self::II => "ii",
            Self::III => "iii",
        }
    }
}

impl std::str::FromStr for Example83Case {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "i" | "1" => Ok(Self::I),
            "ii" | "2" => Ok(Self::II),
            "iii" | "3" => Ok(Self::III),
            other => Err(Error::Parse(format!("unknown case '{other}'"))),
        }
    }
}

fn oscillatory_part() -> f64 {
    let em2 = (-2.0f64).exp();
    -(SQRT_2.cos()) / 9.0 * (em2 / 2.0 - E) + SQRT_2.sin() / (9.0 * SQRT_2) * (em2 / 2.0 + 2.0 * E)
}

/// Mode-(i) constant `4/9 − cos√2/9 (e⁻²/2 − e) + sin√2/(9√2) (e⁻²/2 + 2e)`.
pub fn c_case_i() -> f64 {
    4.0 / 9.0 + oscillatory_part()
}

/// Mode-(ii) constant, the mode-(i) expression with `4/9` replaced by `−5/9`.
pub fn c_case_ii() -> f64 {
    -5.0 / 9.0 + oscillatory_part()
}

/// `v₁` determined by the terminal condition of each mode.
pub fn v1_for(case: Example83Case, v2: f64) -> f64 {
    match case {
        Example83Case::I => v2 - (v2 - 1.0) / c_case_i(),
        Example83Case::II => v2 + (v2 - 1.0) / c_case_ii(),
        Example83Case::III => 1.0,
    }
}

/// Closed-form candidate `(x̄, ȳ, ā)` with `ū ≡ 0` and no `b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Example83Solution {
    pub case: Example83Case,
    pub v1: f64,
    pub v2: f64,
    pub cost: f64,
}

impl Example83Solution {
    fn d(&self) -> f64 {
        self.v1 - self.v2
    }

    /// Oscillation amplitudes `(A, B)` with `x̄₁ − x̄₂` containing `2(A cos√2t − B sin√2t)`.
    fn amplitudes(&self) -> (f64, f64) {
        let d = self.d();
        let em2 = (-2.0f64).exp();
        let a = (d / 6.0 * em2 - d / 3.0 * E) / 3.0;
        let b = (d / 18.0 * em2 + 2.0 * d / 9.0 * E) / SQRT_2;
        (a, b)
    }

    /// Half difference `(x̄₁ − x̄₂)/2`.
    fn half_gap(&self, t: f64) -> f64 {
        let d = self.d();
        let (a, b) = self.amplitudes();
        let w = SQRT_2 * t;
        -d / 18.0 * (2.0 * t - 2.0).exp() + d / 9.0 * (1.0 - t).exp() + a * w.cos() - b * w.sin()
    }

    fn half_gap_rate(&self, t: f64) -> f64 {
        let d = self.d();
        let (a, b) = self.amplitudes();
        let w = SQRT_2 * t;
        -d / 9.0 * (2.0 * t - 2.0).exp() - d / 9.0 * (1.0 - t).exp() - SQRT_2 * (a * w.sin() + b * w.cos())
    }

    /// `∫₀ᵗ (x̄₁ − x̄₂)/2`.
    fn half_gap_integral(&self, t: f64) -> f64 {
        let d = self.d();
        let (a, b) = self.amplitudes();
        let w = SQRT_2 * t;
        -d / 36.0 * ((2.0 * t - 2.0).exp() - (-2.0f64).exp()) + d / 9.0 * (E - (1.0 - t).exp())
            + a * w.sin() / SQRT_2
            - b * (1.0 - w.cos()) / SQRT_2
    }

    pub fn control(&self, t: f64) -> DVector<f64> {
        let d = self.d();
        let s = d / 3.0 * (1.0 - t).exp() + d / 6.0 * (2.0 * t - 2.0).exp() - d / 2.0;
        DVector::from_column_slice(&[-self.v1 - s, -self.v2 + s])
    }

    pub fn control_rate(&self, t: f64) -> DVector<f64> {
        let d = self.d();
        let s = -d / 3.0 * (1.0 - t).exp() + d / 3.0 * (2.0 * t - 2.0).exp();
        DVector::from_column_slice(&[-s, s])
    }

    pub fn state(&self, t: f64) -> DVector<f64> {
        let mean = 1.0 - (self.v1 + self.v2) / 2.0 * t;
        let g = self.half_gap(t);
        DVector::from_column_slice(&[mean + g, mean - g])
    }

    pub fn state_rate(&self, t: f64) -> DVector<f64> {
        let mean = -(self.v1 + self.v2) / 2.0;
        let g = self.half_gap_rate(t);
        DVector::from_column_slice(&[mean + g, mean - g])
    }

    /// `ȳ(t) = ∫₀ᵗ A₂ x̄`.
    pub fn memory(&self, t: f64) -> DVector<f64> {
        let i = 2.0 * self.half_gap_integral(t);
        DVector::from_column_slice(&[i, -i])
    }

    /// Derived observable `x̄₃ = ā₂ + x̄₂`.
    pub fn x3(&self, t: f64) -> f64 {
        self.control(t)[1] + self.state(t)[1]
    }

    /// Smallest component of `x̄` on a uniform grid of `[0, 1)`.
    pub fn interior_margin(&self, samples: usize) -> f64 {
        (0..samples)
            .map(|i| {
                let x = self.state(i as f64 / samples as f64);
                x[0].min(x[1])
            })
            .fold(f64::INFINITY, f64::min)
    }
}

impl Reference for Example83Solution {
    fn horizon(&self) -> f64 {
        1.0
    }
    fn dims(&self) -> (usize, usize, usize) {
        (2, 2, 0)
    }
    fn value(&self, t: f64) -> Quintuple {
        Quintuple {
            x: self.state(t),
            y: self.memory(t),
            u: DVector::zeros(2),
            a: self.control(t),
            b: DVector::zeros(0),
        }
    }
    fn velocity(&self, t: f64) -> Quintuple {
        let g = 2.0 * self.half_gap(t);
        Quintuple {
            x: self.state_rate(t),
            y: DVector::from_column_slice(&[g, -g]),
            u: DVector::zeros(2),
            a: self.control_rate(t),
            b: DVector::zeros(0),
        }
    }
}

/// `∫₀¹ (α + β e^{1−t} + γ e^{2t−2})² dt` in closed form.
fn exp_quadratic_integral(alpha: f64, beta: f64, gamma: f64) -> f64 {
    let i1 = E - 1.0;
    let i2 = (1.0 - (-2.0f64).exp()) / 2.0;
    let i3 = (E * E - 1.0) / 2.0;
    let i4 = 1.0 - (-1.0f64).exp();
    let i5 = (1.0 - (-4.0f64).exp()) / 4.0;
    alpha * alpha + 2.0 * alpha * beta * i1 + 2.0 * alpha * gamma * i2 + beta * beta * i3
        + 2.0 * beta * gamma * i4
        + gamma * gamma * i5
}

/// `J = x̄₂(1)²/2 + ½∫₀¹‖ā‖²` for the given `(v₁, v₂)`.
fn closed_form_cost(v1: f64, v2: f64) -> f64 {
    let d = v1 - v2;
    let probe = Example83Solution { case: Example83Case::I, v1, v2, cost: 0.0 };
    let x2 = probe.state(1.0)[1];
    let j1 = exp_quadratic_integral(-v1 + d / 2.0, -d / 3.0, -d / 6.0);
    let j2 = exp_quadratic_integral(-v2 - d / 2.0, d / 3.0, d / 6.0);
    0.5 * x2 * x2 + 0.5 * (j1 + j2)
}

/// Closed-form cost of a mode as a function of `v₂`.
pub fn example83_cost(case: Example83Case, v2: f64) -> f64 {
    let v2 = if case == Example83Case::III { 1.0 } else { v2 };
    closed_form_cost(v1_for(case, v2), v2)
}

/// Same cost by composite Simpson quadrature on `panels` (even) panels.
pub fn example83_cost_simpson(sol: &Example83Solution, panels: usize) -> f64 {
    let n = panels.max(2) & !1;
    let h = 1.0 / n as f64;
    let f = |t: f64| 0.5 * sol.control(t).norm_squared();
    let mut s = f(0.0) + f(1.0);
    for i in 1..n {
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(i as f64 * h);
    }
    let x2 = sol.state(1.0)[1];
    0.5 * x2 * x2 + s * h / 3.0
}

/// Analytic candidate of a mode. `v2` is ignored for mode (iii).
pub fn example83_analytic(case: Example83Case, v2: f64) -> Example83Solution {
    let v2 = if case == Example83Case::III { 1.0 } else { v2 };
    let v1 = v1_for(case, v2);
    Example83Solution { case, v1, v2, cost: closed_form_cost(v1, v2) }
}

/// Minimizes the mode cost over `v₂ ∈ [−10, 10]` by golden section search
/// followed by Newton steps on central differences.
pub fn example83_optimize_mode(case: Example83Case) -> Result<(f64, f64)> {
    if case == Example83Case::III {
        return Ok((1.0, example83_cost(case, 1.0)));
    }
    let f = |v: f64| example83_cost(case, v);
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut lo, mut hi) = (-10.0, 10.0);
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    while hi - lo > 1e-6 {
        if f1 < f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = f(x2);
        }
    }
    let mut v = 0.5 * (lo + hi);
    let step = 1e-4;
    for _ in 0..5 {
        let g = (f(v + step) - f(v - step)) / (2.0 * step);
        let c = (f(v + step) - 2.0 * f(v) + f(v - step)) / (step * step);
        if !(c > 0.0) {
            break;
        }
        let dv = g / c;
        v -= dv;
        if dv.abs() < 1e-14 {
            break;
        }
    }
    if !v.is_finite() || !(-10.0..=10.0).contains(&v) {
        return Err(Error::Domain(format!("mode {} minimizer left the bracket", case.name())));
    }
    Ok((v, f(v)))
}
