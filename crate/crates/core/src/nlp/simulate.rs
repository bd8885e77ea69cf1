//! Forward simulation of a fixed mode sequence: classical RK4 with
//! piecewise-constant controls, and an element-by-element solve of the
//! Radau collocation equations. Both serve as initial-guess generators and as
//! independent checks on the transcription.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::expr::{Expr, ExprError};
use crate::model::{BooleanAssignment, DagdpModel, Disjunct, LogicError, ModelError, SymbolKind};
use crate::transcription::{
    collocation_layout, differentiation_matrix, CollocationLayout, CollocationScheme, TranscriptionError,
};

#[derive(Debug, Error, PartialEq)]
pub enum SimulationError {
    #[error("configuration {0} violates the logic propositions")]
    InfeasibleConfiguration(BooleanAssignment),
    #[error("expected {expected} control entries, found {found}")]
    ControlCountMismatch { expected: usize, found: usize },
    #[error("state became non-finite at t = {time}")]
    NonFiniteState { time: f64 },
    #[error("simulation does not support algebraic variables")]
    AlgebraicVariables,
    #[error("steps per element must be positive")]
    NoSteps,
    #[error("collocation equations did not converge in element {element}")]
    NoConvergence { element: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Logic(#[from] LogicError),
    #[error(transparent)]
    Transcription(#[from] TranscriptionError),
    #[error(transparent)]
    Expr(#[from] ExprError),
}

/// Dense simulation output.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    /// State values per sample, in state declaration order.
    pub states: Vec<Vec<f64>>,
    /// Running integral of the objective integrand.
    pub quadrature: Vec<f64>,
}

impl Trajectory {
    /// `(time, value)` pairs of state `i`.
    pub fn state(&self, i: usize) -> Vec<(f64, f64)> {
        self.times.iter().zip(&self.states).map(|(&t, x)| (t, x[i])).collect()
    }

    /// Linear interpolation of state `i` at `t` (clamped to the horizon).
    pub fn interpolate(&self, i: usize, t: f64) -> f64 {
        let k = self.times.partition_point(|&s| s < t);
        if k == 0 {
            return self.states[0][i];
        }
        if k == self.times.len() {
            return self.states[k - 1][i];
        }
        let (t0, t1) = (self.times[k - 1], self.times[k]);
        let w = if t1 > t0 { (t - t0) / (t1 - t0) } else { 1.0 };
        self.states[k - 1][i] * (1.0 - w) + self.states[k][i] * w
    }
}

pub(crate) fn midpoint(lower: f64, upper: f64) -> f64 {
    match (lower.is_finite(), upper.is_finite()) {
        (true, true) => 0.5 * (lower + upper),
        (true, false) => lower,
        (false, true) => upper,
        (false, false) => 0.0,
    }
}

/// Evaluates mode right-hand sides in the model's symbol space.
struct Dynamics<'a> {
    model: &'a DagdpModel,
    states: Vec<usize>,
    controls: Vec<usize>,
    point: Vec<f64>,
}

impl<'a> Dynamics<'a> {
    fn new(model: &'a DagdpModel, a: &BooleanAssignment) -> Result<Self, SimulationError> {
        model.validate()?;
        if !model.is_feasible_configuration(a)? {
            return Err(SimulationError::InfeasibleConfiguration(a.clone()));
        }
        if !model.algebraic_indices().is_empty() {
            return Err(SimulationError::AlgebraicVariables);
        }
        let mut point = vec![0.0; model.symbols.len()];
        for p in model.parameter_indices() {
            let (lo, hi) = model.symbols[p].bounds();
            point[p] = midpoint(lo, hi);
        }
        Ok(Self {
            model,
            states: model.state_indices(),
            controls: model.control_indices(),
            point,
        })
    }

    fn n_differential(&self) -> usize {
        self.states.len() + 1
    }

    fn initial(&self) -> Vec<f64> {
        let mut y: Vec<f64> = self
            .states
            .iter()
            .map(|&s| match self.model.symbols[s].kind {
                SymbolKind::State { initial, .. } => initial,
                _ => unreachable!("state indices refer to states"),
            })
            .collect();
        y.push(0.0);
        y
    }

    fn load(&mut self, t: f64, y: &[f64], u: &[f64]) {
        self.point[0] = t;
        for (&s, &v) in self.states.iter().zip(y) {
            self.point[s] = v;
        }
        for (&c, &v) in self.controls.iter().zip(u) {
            self.point[c] = v;
        }
    }

    fn rhs_expr<'d>(&'d self, mode: &'d Disjunct, i: usize) -> &'d Expr {
        if i < self.states.len() {
            &mode.rhs[i]
        } else {
            &self.model.objective.integrand
        }
    }

    /// Derivative of states and quadrature.
    fn eval(&mut self, mode: &Disjunct, t: f64, y: &[f64], u: &[f64], out: &mut [f64]) -> Result<(), ExprError> {
        self.load(t, y, u);
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.rhs_expr(mode, i).eval(&self.point)?;
        }
        Ok(())
    }

    fn rk4_step(&mut self, mode: &Disjunct, t: f64, h: f64, y: &mut [f64], u: &[f64]) -> Result<(), ExprError> {
        let n = y.len();
        let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        let mut tmp = vec![0.0; n];
        self.eval(mode, t, y, u, &mut k1)?;
        for i in 0..n {
            tmp[i] = y[i] + 0.5 * h * k1[i];
        }
        self.eval(mode, t + 0.5 * h, &tmp, u, &mut k2)?;
        for i in 0..n {
            tmp[i] = y[i] + 0.5 * h * k2[i];
        }
        self.eval(mode, t + 0.5 * h, &tmp, u, &mut k3)?;
        for i in 0..n {
            tmp[i] = y[i] + h * k3[i];
        }
        self.eval(mode, t + h, &tmp, u, &mut k4)?;
        for i in 0..n {
            y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        Ok(())
    }

    /// Integrates from `t0` to `t1` in `steps` equal RK4 steps.
    fn integrate(
        &mut self,
        mode: &Disjunct,
        t0: f64,
        t1: f64,
        steps: usize,
        y: &mut [f64],
        u: &[f64],
        mut sample: impl FnMut(f64, &[f64]),
    ) -> Result<(), SimulationError> {
        let h = (t1 - t0) / steps as f64;
        for j in 0..steps {
            let t = t0 + h * j as f64;
            let t_next = if j + 1 == steps { t1 } else { t0 + h * (j + 1) as f64 };
            match self.rk4_step(mode, t, h, y, u) {
                Ok(()) if y.iter().all(|v| v.is_finite()) => sample(t_next, y),
                Ok(()) | Err(ExprError::Domain(_)) => return Err(SimulationError::NonFiniteState { time: t_next }),
                Err(e) => return Err(e.into()),
            }
        }
        Ok(())
    }
}

fn elements(model: &DagdpModel, elements_per_stage: usize) -> Vec<(usize, f64, f64)> {
    let mut out = Vec::new();
    for s in 0..model.n_stages() {
        let (t0, t1) = (model.stage_times[s], model.stage_times[s + 1]);
        let h = (t1 - t0) / elements_per_stage as f64;
        for e in 0..elements_per_stage {
            let end = if e + 1 == elements_per_stage { t1 } else { t0 + h * (e + 1) as f64 };
            out.push((s, t0 + h * e as f64, end));
        }
    }
    out
}

fn check_controls(model: &DagdpModel, controls: &[Vec<f64>]) -> Result<usize, SimulationError> {
    let stages = model.n_stages();
    if controls.is_empty() || !controls.len().is_multiple_of(stages) {
        return Err(SimulationError::ControlCountMismatch {
            expected: stages * (controls.len() / stages).max(1),
            found: controls.len(),
        });
    }
    let nc = model.control_indices().len();
    if let Some(bad) = controls.iter().find(|u| u.len() != nc) {
        return Err(SimulationError::ControlCountMismatch { expected: nc, found: bad.len() });
    }
    Ok(controls.len() / stages)
}

/// RK4 simulation of the mode sequence `a` with one control vector per
/// element (elements split every stage equally). Samples include every
/// element boundary.
pub fn simulate(
    model: &DagdpModel,
    a: &BooleanAssignment,
    controls: &[Vec<f64>],
    steps_per_element: usize,
) -> Result<Trajectory, SimulationError> {
    if steps_per_element == 0 {
        return Err(SimulationError::NoSteps);
    }
    let mut dynamics = Dynamics::new(model, a)?;
    let per_stage = check_controls(model, controls)?;
    let mut y = dynamics.initial();
    let ns = dynamics.states.len();
    let mut out = Trajectory {
        times: vec![model.stage_times[0]],
        states: vec![y[..ns].to_vec()],
        quadrature: vec![0.0],
    };
    for (e, (stage, t0, t1)) in elements(model, per_stage).into_iter().enumerate() {
        let mode = &model.stages[stage][a.modes()[stage]];
        dynamics.integrate(mode, t0, t1, steps_per_element, &mut y, &controls[e], |t, y| {
            out.times.push(t);
            out.states.push(y[..ns].to_vec());
            out.quadrature.push(y[ns]);
        })?;
    }
    Ok(out)
}

/// Control values used for initialization: bound midpoints, with the fixed
/// first-element value where the model declares one.
pub fn default_controls(model: &DagdpModel, n_elements: usize) -> Vec<Vec<f64>> {
    (0..n_elements)
        .map(|e| {
            model
                .control_indices()
                .iter()
                .map(|&c| match model.symbols[c].kind {
                    SymbolKind::Control { fixed_initial: Some(v), .. } if e == 0 => v,
                    SymbolKind::Control { lower, upper, .. } => midpoint(lower, upper),
                    _ => unreachable!("control indices refer to controls"),
                })
                .collect()
        })
        .collect()
}

fn write_controls(layout: &CollocationLayout, controls: &[Vec<f64>], x: &mut [f64]) {
    for (e, u) in controls.iter().enumerate() {
        for (c, &v) in u.iter().enumerate() {
            x[layout.control_index(e, c)] = v;
        }
    }
}

fn write_parameters(model: &DagdpModel, layout: &CollocationLayout, x: &mut [f64]) {
    for (p, &sym) in model.parameter_indices().iter().enumerate() {
        let (lo, hi) = model.symbols[sym].bounds();
        x[layout.parameter_index(p)] = midpoint(lo, hi);
    }
}

fn midpoint_guess(model: &DagdpModel, layout: &CollocationLayout) -> Vec<f64> {
    let mut x = vec![0.0; layout.n_vars()];
    let states = model.state_indices();
    let algebraics = model.algebraic_indices();
    let node = |x: &mut Vec<f64>, e: usize, k: usize| {
        for (i, &s) in states.iter().enumerate() {
            let (lo, hi) = model.symbols[s].bounds();
            x[layout.differential_index(e, k, i)] = midpoint(lo, hi);
        }
        if k > 0 {
            for (i, &s) in algebraics.iter().enumerate() {
                let (lo, hi) = model.symbols[s].bounds();
                x[layout.algebraic_index(e, k, i)] = midpoint(lo, hi);
            }
        }
    };
    node(&mut x, 0, 0);
    for e in 0..layout.n_elements() {
        for k in 1..=layout.scheme.points {
            node(&mut x, e, k);
        }
    }
    write_controls(layout, &default_controls(model, layout.n_elements()), &mut x);
    write_parameters(model, layout, &mut x);
    x
}

/// Starting point for the collocation NLP of configuration `a`.
///
/// Controls take [`default_controls`]; states come from an RK4 simulation
/// under those controls evaluated at every collocation node and clipped into
/// their bounds; the quadrature state is integrated alongside. If the
/// simulation blows up, or the model has algebraic variables, every variable
/// is placed at the midpoint of its bounds instead.
pub fn initial_guess(
    model: &DagdpModel,
    a: &BooleanAssignment,
    scheme: &CollocationScheme,
) -> Result<Vec<f64>, SimulationError> {
    let layout = collocation_layout(model, scheme)?;
    let mut dynamics = match Dynamics::new(model, a) {
        Err(SimulationError::AlgebraicVariables) => return Ok(midpoint_guess(model, &layout)),
        other => other?,
    };
    let controls = default_controls(model, layout.n_elements());
    let mut x = vec![0.0; layout.n_vars()];
    let nd = dynamics.n_differential();
    let bounds: Vec<(f64, f64)> = dynamics
        .states
        .iter()
        .map(|&s| model.symbols[s].bounds())
        .chain(std::iter::once((f64::NEG_INFINITY, f64::INFINITY)))
        .collect();
    let store = |x: &mut Vec<f64>, e: usize, k: usize, y: &[f64]| {
        for i in 0..nd {
            x[layout.differential_index(e, k, i)] = y[i].clamp(bounds[i].0, bounds[i].1);
        }
    };

    let mut y = dynamics.initial();
    store(&mut x, 0, 0, &y);
    const SUBSTEPS: usize = 4;
    for e in 0..layout.n_elements() {
        let stage = layout.stage_of(e);
        let mode = &model.stages[stage][a.modes()[stage]];
        let mut t = layout.node_time(e, 0);
        for k in 1..=scheme.points {
            let t_next = layout.node_time(e, k);
            let outcome = dynamics.integrate(mode, t, t_next, SUBSTEPS, &mut y, &controls[e], |_, _| {});
            match outcome {
                Ok(()) => {}
                Err(SimulationError::NonFiniteState { .. }) => return Ok(midpoint_guess(model, &layout)),
                Err(err) => return Err(err),
            }
            store(&mut x, e, k, &y);
            t = t_next;
        }
    }
    write_controls(&layout, &controls, &mut x);
    write_parameters(model, &layout, &mut x);
    Ok(x)
}

/// Solves the collocation equations of `a` element by element with Newton's
/// method for the given per-element controls. Returns a full NLP vector in
/// the layout produced by [`crate::transcription::transcribe`].
pub fn collocation_simulate(
    model: &DagdpModel,
    a: &BooleanAssignment,
    scheme: &CollocationScheme,
    controls: &[Vec<f64>],
) -> Result<Vec<f64>, SimulationError> {
    let layout = collocation_layout(model, scheme)?;
    let mut dynamics = Dynamics::new(model, a)?;
    if controls.len() != layout.n_elements() {
        return Err(SimulationError::ControlCountMismatch {
            expected: layout.n_elements(),
            found: controls.len(),
        });
    }
    check_controls(model, controls)?;
    let dmat = differentiation_matrix(&layout.tau)?;
    let nd = dynamics.n_differential();
    let kp = scheme.points;
    let unknowns = kp * nd;
    let state_slot: Vec<(usize, usize)> = dynamics.states.iter().copied().enumerate().map(|(i, s)| (s, i)).collect();

    let mut x = vec![0.0; layout.n_vars()];
    let mut y0 = dynamics.initial();
    for i in 0..nd {
        x[layout.differential_index(0, 0, i)] = y0[i];
    }
    let mut f = vec![0.0; nd];
    for e in 0..layout.n_elements() {
        let stage = layout.stage_of(e);
        let mode = &model.stages[stage][a.modes()[stage]];
        let h = layout.element_width[e];
        let u = &controls[e];
        let mut z = DVector::from_fn(unknowns, |r, _| y0[r % nd]);
        let mut converged = false;
        for _ in 0..50 {
            let mut residual = DVector::zeros(unknowns);
            let mut jac = DMatrix::zeros(unknowns, unknowns);
            for k in 1..=kp {
                let t = layout.node_time(e, k);
                let yk: Vec<f64> = (0..nd).map(|i| z[(k - 1) * nd + i]).collect();
                dynamics.eval(mode, t, &yk, u, &mut f)?;
                for i in 0..nd {
                    let row = (k - 1) * nd + i;
                    let mut r = y0[i] * dmat[0][k - 1] - h * f[i];
                    for j in 1..=kp {
                        r += z[(j - 1) * nd + i] * dmat[j][k - 1];
                        jac[(row, (j - 1) * nd + i)] += dmat[j][k - 1];
                    }
                    residual[row] = r;
                    dynamics.load(t, &yk, u);
                    let grad = dynamics.rhs_expr(mode, i).gradient(&dynamics.point)?;
                    for &(sym, l) in &state_slot {
                        jac[(row, (k - 1) * nd + l)] -= h * grad[sym];
                    }
                }
            }
            if !residual.iter().all(|v| v.is_finite()) {
                return Err(SimulationError::NonFiniteState { time: layout.node_time(e, 0) });
            }
            if residual.amax() < 1e-12 {
                converged = true;
                break;
            }
            let Some(step) = jac.lu().solve(&residual) else {
                break;
            };
            z -= step;
        }
        if !converged {
            return Err(SimulationError::NoConvergence { element: e });
        }
        for k in 1..=kp {
            for i in 0..nd {
                x[layout.differential_index(e, k, i)] = z[(k - 1) * nd + i];
            }
        }
        y0 = (0..nd).map(|i| z[(kp - 1) * nd + i]).collect();
    }
    write_controls(&layout, controls, &mut x);
    write_parameters(model, &layout, &mut x);
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn decay_model(rate: f64) -> DagdpModel {
        let mut m = DagdpModel::new("decay", vec![0.0, 1.0]);
        let x = m.add_state("x", -10.0, 10.0, 1.0);
        m.objective.integrand = x.clone();
        m.add_disjunct(0, Disjunct::new(vec![-rate * x]));
        m
    }

    #[test]
    fn constant_dynamics_stay_put() {
        let m = decay_model(0.0);
        let a = BooleanAssignment::new(vec![0]);
        let traj = simulate(&m, &a, &[vec![], vec![]], 10).unwrap();
        assert_eq!(traj.times.len(), 21);
        assert!(traj.states.iter().all(|x| x[0] == 1.0));
        assert_abs_diff_eq!(traj.times[10], 0.5);
    }

    #[test]
    fn exponential_decay_matches_closed_form() {
        let m = decay_model(1.0);
        let a = BooleanAssignment::new(vec![0]);
        let traj = simulate(&m, &a, &[vec![]], 100).unwrap();
        assert_abs_diff_eq!(traj.states.last().unwrap()[0], (-1.0f64).exp(), epsilon = 1e-9);
        assert_abs_diff_eq!(*traj.quadrature.last().unwrap(), 1.0 - (-1.0f64).exp(), epsilon = 1e-9);
    }

    #[test]
    fn blow_up_is_reported() {
        let mut m = DagdpModel::new("blowup", vec![0.0, 2.0]);
        let x = m.add_state("x", 0.0, 10.0, 1.0);
        m.add_disjunct(0, Disjunct::new(vec![x.clone() * x.clone() * 10.0]));
        let a = BooleanAssignment::new(vec![0]);
        assert!(matches!(
            simulate(&m, &a, &[vec![]], 50),
            Err(SimulationError::NonFiniteState { .. })
        ));
        // the initial guess falls back to bound midpoints
        let guess = initial_guess(&m, &a, &CollocationScheme::new(2, 2)).unwrap();
        assert!(guess.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn guess_clips_states() {
        let mut m = DagdpModel::new("growth", vec![0.0, 1.0]);
        let x = m.add_state("x", 0.0, 2.0, 1.0);
        m.add_disjunct(0, Disjunct::new(vec![x * 0.0 + 5.0]));
        let a = BooleanAssignment::new(vec![0]);
        let scheme = CollocationScheme::new(4, 3);
        let guess = initial_guess(&m, &a, &scheme).unwrap();
        let layout = collocation_layout(&m, &scheme).unwrap();
        assert_eq!(guess[layout.differential_index(0, 0, 0)], 1.0);
        assert_eq!(guess[layout.differential_index(3, 3, 0)], 2.0);
    }

    #[test]
    fn collocation_matches_decay() {
        let m = decay_model(1.0);
        let a = BooleanAssignment::new(vec![0]);
        let scheme = CollocationScheme::new(5, 3);
        let layout = collocation_layout(&m, &scheme).unwrap();
        let x = collocation_simulate(&m, &a, &scheme, &vec![vec![]; 5]).unwrap();
        // three-point Radau is fifth order at element ends: h^5 ~ 3e-4 times a small constant
        assert_abs_diff_eq!(x[layout.differential_index(4, 3, 0)], (-1.0f64).exp(), epsilon = 1e-7);
    }
}
