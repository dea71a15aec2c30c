//! Property tests of the invariants shared across modules.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use crate::dynamics::{
    discrete_gronwall, simulate, ControlMask, ControlSchedule, GrowthConstants, LinearField, Mesh, ProblemSpec,
    QuadraticCost, RunningCost,
};
use crate::geometry::{normal_cone_decompose, project, prox_radius, MovingSet};
use crate::optimality::{coderivative_check, Cotangent, GraphPoint};

fn vec_in(dim: usize, lo: f64, hi: f64) -> impl Strategy<Value = DVector<f64>> {
    proptest::collection::vec(lo..hi, dim).prop_map(DVector::from_vec)
}

fn gronwall_forward(e0: f64, sigmas: &[f64], rhos: &[f64], gammas: &[f64]) -> Vec<f64> {
    let mut e = vec![e0];
    for j in 0..sigmas.len() {
        let past: f64 = e[..j].iter().sum();
        e.push(sigmas[j] + rhos[j] * past + (1.0 + gammas[j]) * e[j]);
    }
    e
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn orthant_projection_is_idempotent(p in vec_in(4, -5.0, 5.0), shift in vec_in(4, -2.0, 2.0)) {
        let set = MovingSet::orthant(4);
        let once = project(&set, &shift, &p).unwrap();
        let twice = project(&set, &shift, &once.point).unwrap();
        prop_assert!((&twice.point - &once.point).norm() <= 1e-12);
        prop_assert!(set.contains(&shift, &once.point, 1e-12).unwrap());
    }

    #[test]
    fn affine_projection_is_idempotent(p in vec_in(3, -4.0, 4.0)) {
        let a = DMatrix::from_row_slice(3, 3, &[1.0, 1.0, 0.0, 0.0, 1.0, -1.0, -1.0, 0.0, 0.5]);
        let c = DVector::from_column_slice(&[1.0, 0.5, 2.0]);
        let set = MovingSet::affine(&a, &c).unwrap();
        let shift = DVector::zeros(3);
        let once = project(&set, &shift, &p).unwrap();
        let twice = project(&set, &shift, &once.point).unwrap();
        prop_assert!((&twice.point - &once.point).norm() <= 1e-12);
    }

    #[test]
    fn orthant_cone_decomposition_round_trips(
        x in vec_in(5, 0.1, 3.0),
        mask in proptest::collection::vec(any::<bool>(), 5),
        lam in vec_in(5, 0.0, 4.0),
    ) {
        let set = MovingSet::orthant(5);
        let mut x = x;
        let mut expect = DVector::zeros(5);
        for i in 0..5 {
            if mask[i] {
                x[i] = 0.0;
                expect[i] = lam[i];
            }
        }
        // ∇g_i = e_i, so w = −Σ λ_i e_i.
        let w = -&expect;
        let u = DVector::zeros(5);
        let d = normal_cone_decompose(&set, &x, &u, &w, 1e-10).unwrap();
        prop_assert!(d.feasible);
        prop_assert!((&d.lambda - &expect).norm() <= 1e-9);
    }

    #[test]
    fn ball_prox_inequality(
        dir in vec_in(3, -1.0, 1.0),
        scale in 0.01f64..5.0,
        y in vec_in(3, -1.0, 1.0),
    ) {
        prop_assume!(dir.norm() > 1e-3);
        let set = MovingSet::ball(3, 1.0);
        let eta = prox_radius(&set.constants).unwrap();
        let x = &dir / dir.norm();
        prop_assume!(y.norm() <= 1.0);
        let w = &x * scale;
        let u = DVector::zeros(3);
        let d = normal_cone_decompose(&set, &x, &u, &w, 1e-10).unwrap();
        prop_assert!(d.feasible);
        let lhs = w.dot(&(&y - &x));
        let rhs = w.norm() / (2.0 * eta) * (&y - &x).norm_squared();
        prop_assert!(lhs <= rhs + 1e-12, "{} > {}", lhs, rhs);
    }

    #[test]
    fn gronwall_bound_dominates_recursion(
        e0 in 0.0f64..2.0,
        data in proptest::collection::vec((0.0f64..1.0, 0.0f64..0.1, 0.0f64..0.2), 1..50),
    ) {
        let sigmas: Vec<f64> = data.iter().map(|t| t.0).collect();
        let rhos: Vec<f64> = data.iter().map(|t| t.1).collect();
        let gammas: Vec<f64> = data.iter().map(|t| t.2).collect();
        let e = gronwall_forward(e0, &sigmas, &rhos, &gammas);
        for i in 0..=sigmas.len() {
            let bound = discrete_gronwall(e0, &sigmas, &rhos, &gammas, i).unwrap();
            prop_assert!(e[i] <= bound * (1.0 + 1e-12), "e_{} = {} > {}", i, e[i], bound);
        }
    }

    #[test]
    fn simulation_stays_feasible(
        x0 in vec_in(2, 0.0, 2.0),
        a in vec_in(2, -3.0, 3.0),
        drift in proptest::collection::vec(-1.0f64..1.0, 4),
        kernel in proptest::collection::vec(-1.0f64..1.0, 4),
        k in 5usize..60,
    ) {
        let spec = ProblemSpec {
            set: MovingSet::orthant(2),
            n: 2,
            m: 2,
            d: 0,
            f1: Arc::new(LinearField::new(DMatrix::identity(2, 2), DMatrix::from_row_slice(2, 2, &drift))),
            f2: Arc::new(LinearField::state_only(DMatrix::from_row_slice(2, 2, &kernel))),
            growth: GrowthConstants::default(),
            terminal: QuadraticCost::zero(2),
            running: RunningCost::zero(),
            horizon: 1.0,
            x0,
            controlled: ControlMask::default(),
        };
        let mesh = Mesh::uniform(1.0, k).unwrap();
        let sched = ControlSchedule::constant(&mesh, DVector::zeros(2), a, DVector::zeros(0));
        let sim = simulate(&spec, &sched).unwrap();
        for x in &sim.trajectory.x {
            prop_assert!(x.min() >= -1e-9);
        }
        let max_x = sim.trajectory.x.iter().map(|x| x.norm()).fold(0.0, f64::max);
        prop_assert!(sim.max_certificate_residual <= 1e-8 * (1.0 + max_x * k as f64));
    }

    #[test]
    fn zero_kernel_keeps_memory_zero(x0 in vec_in(2, 0.0, 2.0), a in vec_in(1, -2.0, 2.0), k in 1usize..40) {
        let spec = ProblemSpec {
            set: MovingSet::orthant(2),
            n: 2,
            m: 1,
            d: 1,
            f1: Arc::new(LinearField::new(DMatrix::from_column_slice(2, 1, &[1.0, -1.0]), DMatrix::zeros(2, 2))),
            f2: Arc::new(LinearField::new(DMatrix::zeros(2, 1), DMatrix::zeros(2, 2))),
            growth: GrowthConstants::default(),
            terminal: QuadraticCost::zero(2),
            running: RunningCost::zero(),
            horizon: 1.0,
            x0,
            controlled: ControlMask::default(),
        };
        let mesh = Mesh::uniform(1.0, k).unwrap();
        let sched = ControlSchedule::constant(&mesh, DVector::zeros(2), a, DVector::from_element(1, 3.0));
        let sim = simulate(&spec, &sched).unwrap();
        prop_assert!(sim.trajectory.y.iter().all(|y| y.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn interior_coderivative_membership(
        x in vec_in(2, 0.2, 3.0),
        y in vec_in(2, -1.0, 1.0),
        z in vec_in(2, -2.0, 2.0),
        h in 0.01f64..0.5,
        delta in 1e-3f64..1.0,
        comp in 0usize..5,
    ) {
        let spec = ProblemSpec {
            set: MovingSet::orthant(2),
            n: 2,
            m: 2,
            d: 1,
            f1: Arc::new(LinearField::new(
                DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.5, 1.0]),
                DMatrix::from_row_slice(2, 2, &[0.3, -0.2, 0.1, 0.4]),
            )),
            f2: Arc::new(LinearField::new(
                DMatrix::from_row_slice(2, 1, &[1.0, -0.5]),
                DMatrix::from_row_slice(2, 2, &[0.5, 0.2, -0.1, 0.6]),
            )),
            growth: GrowthConstants::default(),
            terminal: QuadraticCost::zero(2),
            running: RunningCost::zero(),
            horizon: 1.0,
            x0: DVector::from_element(2, 1.0),
            controlled: ControlMask::default(),
        };
        let (u, a, b) = (DVector::zeros(2), DVector::from_column_slice(&[0.3, 0.4]), DVector::from_element(1, 0.5));
        let w = spec.f1.eval(&a, &x) + &y + spec.f2.eval(&b, &x) * h;
        let point = GraphPoint { x: x.clone(), y, u, a: a.clone(), b: b.clone(), w };
        let cand = Cotangent {
            x: spec.f1.jac_x(&a, &x).transpose() * &z + spec.f2.jac_x(&b, &x).transpose() * &z * h,
            y: z.clone(),
            u: DVector::zeros(2),
            a: spec.f1.jac_c(&a, &x).transpose() * &z,
            b: spec.f2.jac_c(&b, &x).transpose() * &z * h,
        };
        prop_assert!(coderivative_check(&spec, &point, &z, h, &cand, 1e-9).unwrap().is_member());
        let mut bad = cand.clone();
        match comp {
            0 => bad.x[1] += delta,
            1 => bad.y[0] += delta,
            2 => bad.u[1] += delta,
            3 => bad.a[0] += delta,
            _ => bad.b[0] += delta,
        }
        let verdict = coderivative_check(&spec, &point, &z, h, &bad, 1e-9).unwrap();
        match verdict {
            crate::optimality::CoderivativeVerdict::ValueMismatch { residual, .. } => {
                prop_assert!(residual >= delta / 2.0)
            }
            other => prop_assert!(false, "accepted perturbation: {:?}", other),
        }
    }
}
