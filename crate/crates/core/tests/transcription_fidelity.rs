//! Collocation accuracy against closed-form solutions and an independent
//! fine-step Runge-Kutta integration.

use ldsda::bench::{multi_stage_model, three_stage_model};
use ldsda::expr::Expr;
use ldsda::model::{BooleanAssignment, DagdpModel, Disjunct};
use ldsda::nlp::{collocation_simulate, default_controls, simulate};
use ldsda::transcription::{collocation_layout, transcribe, CollocationScheme};

mod common;
use common::{benchmark_rhs, rk4_oracle};

/// One stage on `[0, horizon]` with a single state and a single mode.
fn single_mode(horizon: f64, initial: f64, rhs: impl Fn(&Expr, &Expr) -> Expr) -> DagdpModel {
    let mut m = DagdpModel::new("single", vec![0.0, horizon]);
    let t = m.time();
    let x = m.add_state("x", f64::NEG_INFINITY, f64::INFINITY, initial);
    m.add_disjunct(0, Disjunct::new(vec![rhs(&x, &t)]));
    m
}

#[test]
fn radau_collocation_is_exact_for_matching_polynomials() {
    for ncp in 1..=5 {
        let c = 1.7;
        let m = single_mode(2.0, 0.3, |_, t| t.clone().powi(ncp as i32 - 1) * c);
        let exact = |t: f64| 0.3 + c * t.powi(ncp as i32) / ncp as f64;
        let a = BooleanAssignment::new(vec![0]);
        for nfe in [1, 3] {
            let scheme = CollocationScheme::new(nfe, ncp);
            let layout = collocation_layout(&m, &scheme).unwrap();
            let elements = vec![Vec::new(); layout.n_elements()];
            let x = collocation_simulate(&m, &a, &scheme, &elements).unwrap();
            for (t, v) in layout.trajectory(&x, 0) {
                assert!((v - exact(t)).abs() <= 1e-10, "ncp {ncp} nfe {nfe} t {t}: {v} vs {}", exact(t));
            }

            // the exact nodal values satisfy every transcribed equation
            let nlp = transcribe(&m, &a, &scheme).unwrap();
            let mut z = vec![0.0; nlp.n_vars()];
            for e in 0..layout.n_elements() {
                for k in 0..=ncp {
                    z[layout.differential_index(e, k, 0)] = exact(layout.node_time(e, k));
                }
            }
            for (r, eq) in nlp.equalities.iter().enumerate() {
                let residual = eq.eval(&z).unwrap();
                assert!(residual.abs() <= 1e-10, "ncp {ncp} row {r}: {residual}");
            }
        }
    }
}

#[test]
fn exponential_decay_reaches_inverse_e() {
    let m = single_mode(1.0, 1.0, |x, _| -x.clone());
    let scheme = CollocationScheme::new(10, 3);
    let a = BooleanAssignment::new(vec![0]);
    let layout = collocation_layout(&m, &scheme).unwrap();
    let x = collocation_simulate(&m, &a, &scheme, &vec![Vec::new(); 10]).unwrap();
    let end = x[layout.differential_index(9, 3, 0)];
    assert!((end - (-1.0f64).exp()).abs() <= 1e-6, "x(1) = {end}");
}

fn compare_with_rk4(model: &DagdpModel, schedule: &[usize], nfe: usize) -> f64 {
    let scheme = CollocationScheme::new(nfe, 3);
    let a = BooleanAssignment::from_one_based(schedule);
    let layout = collocation_layout(model, &scheme).unwrap();
    let controls = default_controls(model, layout.n_elements());
    let colloc = collocation_simulate(model, &a, &scheme, &controls).unwrap();
    let u: Vec<f64> = controls.iter().map(|c| c[0]).collect();
    let h = 1.0 / nfe as f64;
    let oracle = rk4_oracle(|e, t, x, u| benchmark_rhs(schedule[e / nfe], t, x, u), 1.0, h, &u, 10);

    let mut worst: f64 = 0.0;
    for e in 0..layout.n_elements() {
        let v = colloc[layout.differential_index(e, 3, 0)];
        worst = worst.max((v - oracle[e + 1]).abs());
    }
    // the library integrator agrees with the oracle as well
    let traj = simulate(model, &a, &controls, 10).unwrap();
    for (e, expected) in oracle.iter().enumerate() {
        let got = traj.states[e * 10][0];
        assert!((got - expected).abs() <= 1e-12 * expected.abs().max(1.0), "element {e}: {got} vs {expected}");
    }
    worst
}

#[test]
fn collocation_matches_fine_rk4_on_benchmark_dynamics() {
    let three = three_stage_model();
    for schedule in [[1, 1, 1], [1, 1, 2], [1, 2, 2]] {
        let err = compare_with_rk4(&three, &schedule, 30);
        assert!(err <= 1e-3, "{schedule:?}: {err}");
    }
    let multi = multi_stage_model(9);
    for schedule in [[1, 2, 2, 2, 3, 3, 3, 3, 3], [1, 2, 3, 3, 3, 3, 3, 3, 3], [1, 1, 1, 1, 1, 2, 2, 2, 2]] {
        let err = compare_with_rk4(&multi, &schedule, 30);
        assert!(err <= 1e-3, "{schedule:?}: {err}");
    }
}

#[test]
fn rk4_error_shrinks_at_fourth_order() {
    let m = single_mode(2.0, 1.0, |x, t| -x.clone() * t.clone());
    let a = BooleanAssignment::new(vec![0]);
    let exact = (-2.0f64).exp();
    let error = |steps: usize| {
        let traj = simulate(&m, &a, &[Vec::new()], steps).unwrap();
        (traj.states.last().unwrap()[0] - exact).abs()
    };
    for steps in [4, 8, 16] {
        let ratio = error(steps) / error(2 * steps);
        assert!((12.0..=20.0).contains(&ratio), "{steps} steps: ratio {ratio}");
    }
}

#[test]
fn collocation_equation_count() {
    let m = multi_stage_model(4);
    let scheme = CollocationScheme::new(30, 3);
    let nlp = transcribe(&m, &BooleanAssignment::from_one_based(&[1, 2, 2, 3]), &scheme).unwrap();
    let layout = nlp.layout.as_ref().unwrap();
    // one state plus the quadrature, plus the two initial conditions
    assert_eq!(nlp.n_equalities(), 4 * 30 * 3 * 2 + 2);
    assert_eq!(layout.n_elements(), 120);
    assert_eq!(ldsda::transcription::collocation_equation_count(&m, &scheme), 4 * 30 * 3 * 2);
}
