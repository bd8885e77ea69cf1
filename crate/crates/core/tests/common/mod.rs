//! Oracles shared by the integration tests. None of them call into the
//! library code they are used to check.

#![allow(dead_code)]

use std::collections::HashMap;
use std::sync::Mutex;

use ldsda::external::{ExternalMap, LatticePoint};
use ldsda::model::BooleanAssignment;
use ldsda::nlp::{SolveResult, SolveStatus};
use ldsda::search::Evaluator;

/// Mode `r + 1` (one-based) at stage `s` needs mode `r` at some earlier stage
/// and forbids mode `r` at every later stage.
pub fn sequencing_holds(schedule: &[usize], modes: usize) -> bool {
    (0..schedule.len()).all(|s| {
        (2..=modes).all(|r| {
            schedule[s] != r || (schedule[..s].contains(&(r - 1)) && !schedule[s + 1..].contains(&(r - 1)))
        })
    })
}

/// All one-based schedules, last stage varying fastest.
pub fn all_schedules(stages: usize, modes: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for _ in 0..stages {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                (1..=modes).map(move |m| {
                    let mut next = prefix.clone();
                    next.push(m);
                    next
                })
            })
            .collect();
    }
    out
}

pub fn oracle_count(stages: usize, modes: usize) -> usize {
    all_schedules(stages, modes).iter().filter(|s| sequencing_holds(s, modes)).count()
}

/// Right-hand sides of the three benchmark modes (one-based).
pub fn benchmark_rhs(mode: usize, t: f64, x: f64, u: f64) -> f64 {
    match mode {
        1 => -x * (x - 1.0).exp() + u,
        2 => (0.5 * x.powi(3) + u) / 20.0,
        3 => (x * x + u) / (t + 20.0),
        _ => unreachable!("benchmarks have three modes"),
    }
}

/// Classical RK4 for `dx/dt = f(element, t, x, u)` with one control value per
/// element of width `h` and `steps` substeps per element. Returns the state
/// at every element boundary.
pub fn rk4_oracle(f: impl Fn(usize, f64, f64, f64) -> f64, x0: f64, h: f64, controls: &[f64], steps: usize) -> Vec<f64> {
    let mut x = x0;
    let mut out = vec![x];
    let dt = h / steps as f64;
    for (e, &u) in controls.iter().enumerate() {
        for j in 0..steps {
            let t = e as f64 * h + j as f64 * dt;
            let k1 = f(e, t, x, u);
            let k2 = f(e, t + dt / 2.0, x + dt / 2.0 * k1, u);
            let k3 = f(e, t + dt / 2.0, x + dt / 2.0 * k2, u);
            let k4 = f(e, t + dt, x + dt * k3, u);
            x += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
        out.push(x);
    }
    out
}

/// Richardson-extrapolated central difference of `f` along coordinate `i`,
/// fourth order in the step.
pub fn central_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], i: usize) -> f64 {
    let diff = |h: f64| {
        let mut p = x.to_vec();
        p[i] = x[i] + h;
        let up = f(&p);
        p[i] = x[i] - h;
        let down = f(&p);
        (up - down) / (2.0 * h)
    };
    let h = 1e-3;
    (4.0 * diff(h / 2.0) - diff(h)) / 3.0
}

pub fn stub_result(objective: f64, status: SolveStatus) -> SolveResult {
    SolveResult {
        status,
        objective,
        x: Vec::new(),
        max_violation: 0.0,
        projected_gradient: 0.0,
        outer_iterations: 1,
        inner_iterations: 1,
        wall_time: 0.0,
        penalty: 10.0,
    }
}

/// Evaluator backed by a table of objectives, counting calls per point.
/// Points missing from the table report a failed solve.
pub struct Table {
    pub values: HashMap<Vec<i64>, f64>,
    pub calls: Mutex<HashMap<LatticePoint, usize>>,
}

impl Table {
    pub fn from_fn(map: &ExternalMap, f: impl Fn(&[i64]) -> Option<f64>) -> Self {
        Self {
            values: map.points().iter().filter_map(|z| f(z.coords()).map(|v| (z.coords().to_vec(), v))).collect(),
            calls: Mutex::new(HashMap::new()),
        }
    }
}

impl Evaluator for Table {
    fn evaluate(&self, point: &LatticePoint, _a: &BooleanAssignment) -> SolveResult {
        *self.calls.lock().unwrap().entry(point.clone()).or_default() += 1;
        match self.values.get(point.coords()) {
            Some(&v) => stub_result(v, SolveStatus::Optimal),
            None => stub_result(f64::NAN, SolveStatus::Infeasible),
        }
    }
}
