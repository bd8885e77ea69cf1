//! Local solver for equality- and bound-constrained NLPs.
//!
//! The outer loop is a classical augmented Lagrangian on the equalities.
//! Each subproblem `min f + λᵀc + μ/2 ‖c‖²` over the bound box is solved by
//! a projected Newton method: variables in the ε-active set take a projected
//! gradient step, the free block takes a Newton step on a (shifted) Cholesky
//! factor of the Lagrangian Hessian. Constraint Hessians are obtained by
//! central differences of exact reverse-mode gradients, restricted to the
//! variables each constraint touches nonlinearly.

mod simulate;
mod skyline;

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{Tape, Workspace};
use crate::transcription::DiscretizedNlp;

pub use simulate::{
    collocation_simulate, default_controls, initial_guess, simulate, SimulationError, Trajectory,
};
pub use skyline::{NotPositiveDefinite, SingularPivot, SkylineMatrix};

/// Constraint violation above which a stalled solve at maximum penalty is
/// reported as infeasible.
/// Largest diagonal shift tried before an inner iteration gives up.
const MAX_SHIFT: f64 = 1e30;

/// Maximum number of times a step is re-solved after pinning variables
/// that cross a bound.
const MAX_PIN_ROUNDS: usize = 8;

pub const INFEASIBILITY_THRESHOLD: f64 = 1e-4;

#[derive(Debug, Error, PartialEq)]
pub enum SolverError {
    #[error("invalid solver settings: {0}")]
    InvalidSettings(&'static str),
    #[error("initial point has {found} entries, the problem has {expected} variables")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("expression references variable {index} but the problem has {n} variables")]
    VariableOutOfRange { index: usize, n: usize },
    #[error("lower bound exceeds upper bound for variable {0}")]
    EmptyBounds(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverSettings {
    pub feasibility_tolerance: f64,
    pub optimality_tolerance: f64,
    pub initial_penalty: f64,
    pub penalty_growth: f64,
    pub penalty_cap: f64,
    pub max_outer_iterations: usize,
    pub max_inner_iterations: usize,
    /// Extra solves from randomly perturbed starting points.
    pub restarts: usize,
    pub seed: u64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            feasibility_tolerance: 1e-6,
            optimality_tolerance: 1e-6,
            initial_penalty: 10.0,
            penalty_growth: 10.0,
            penalty_cap: 1e8,
            max_outer_iterations: 50,
            max_inner_iterations: 500,
            restarts: 0,
            seed: 0,
        }
    }
}

impl SolverSettings {
    pub fn validate(&self) -> Result<(), SolverError> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !positive(self.feasibility_tolerance) || !positive(self.optimality_tolerance) {
            return Err(SolverError::InvalidSettings("tolerances must be positive"));
        }
        if !positive(self.initial_penalty) || !(self.penalty_cap >= self.initial_penalty) {
            return Err(SolverError::InvalidSettings(
                "penalties must be positive with cap >= initial",
            ));
        }
        if !(self.penalty_growth > 1.0) || !self.penalty_growth.is_finite() {
            return Err(SolverError::InvalidSettings("penalty growth must exceed 1"));
        }
        if self.max_outer_iterations == 0 || self.max_inner_iterations == 0 {
            return Err(SolverError::InvalidSettings("iteration limits must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    IterationLimit,
    NumericFailure,
}

impl SolveStatus {
    pub fn is_optimal(self) -> bool {
        self == SolveStatus::Optimal
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveResult {
    pub status: SolveStatus,
    pub objective: f64,
    pub x: Vec<f64>,
    pub max_violation: f64,
    /// Infinity norm of the projected gradient of the augmented Lagrangian at
    /// `x`, using the multipliers of the final subproblem.
    pub projected_gradient: f64,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub wall_time: f64,
    pub penalty: f64,
}

/// Per-subproblem record of a solve.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OuterRecord {
    pub penalty: f64,
    pub max_violation: f64,
    pub projected_gradient: f64,
    /// Merit value at the start of the subproblem followed by the value after
    /// every accepted step.
    pub merit: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SolveLog {
    pub outer: Vec<OuterRecord>,
}

/// Solves `nlp` from `initial` (projected onto the bounds first).
pub fn solve(
    nlp: &DiscretizedNlp,
    initial: &[f64],
    settings: &SolverSettings,
) -> Result<SolveResult, SolverError> {
    solve_logged(nlp, initial, settings, &mut SolveLog::default())
}

/// [`solve`] that also records the iteration history of the first start.
pub fn solve_logged(
    nlp: &DiscretizedNlp,
    initial: &[f64],
    settings: &SolverSettings,
    log: &mut SolveLog,
) -> Result<SolveResult, SolverError> {
    settings.validate()?;
    let n = nlp.n_vars();
    if initial.len() != n {
        return Err(SolverError::DimensionMismatch { expected: n, found: initial.len() });
    }
    if let Some(i) = (0..n).find(|&i| !(nlp.lower[i] <= nlp.upper[i])) {
        return Err(SolverError::EmptyBounds(i));
    }
    let start = Instant::now();
    let mut problem = Compiled::new(nlp)?;
    problem.scale_rows(initial);
    let mut best = problem.solve_from(initial, settings, log);
    if settings.restarts > 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
        for _ in 0..settings.restarts {
            let perturbed: Vec<f64> = initial
                .iter()
                .enumerate()
                .map(|(i, &v)| {
                    let (lo, hi) = (nlp.lower[i], nlp.upper[i]);
                    let scale = if lo.is_finite() && hi.is_finite() { hi - lo } else { 1.0 + v.abs() };
                    v + rng.gen_range(-0.1..=0.1) * scale
                })
                .collect();
            let candidate = problem.solve_from(&perturbed, settings, &mut SolveLog::default());
            if better(&candidate, &best) {
                best = SolveResult {
                    outer_iterations: best.outer_iterations + candidate.outer_iterations,
                    inner_iterations: best.inner_iterations + candidate.inner_iterations,
                    ..candidate
                };
            } else {
                best.outer_iterations += candidate.outer_iterations;
                best.inner_iterations += candidate.inner_iterations;
            }
        }
    }
    best.wall_time = start.elapsed().as_secs_f64();
    Ok(best)
}

fn better(a: &SolveResult, b: &SolveResult) -> bool {
    match (a.status.is_optimal(), b.status.is_optimal()) {
        (true, false) => true,
        (false, true) => false,
        (true, true) => a.objective < b.objective,
        (false, false) => a.max_violation < b.max_violation,
    }
}

struct Term {
    tape: Tape,
    /// Profile positions of the lower-triangular nonlinear slot pairs,
    /// indexed by `a * (a + 1) / 2 + b` for `b <= a`.
    hessian: Vec<usize>,
    /// Profile positions of the Jacobian row, one per support slot.
    jacobian: Vec<usize>,
    /// Profile position of the constraint's own diagonal entry.
    diagonal: usize,
}

/// Problem data compiled for the augmented Newton system
/// `[W, Jᵀ; J, -I/μ]`, whose rows interleave variables and constraints.
struct Compiled {
    lower: Vec<f64>,
    upper: Vec<f64>,
    objective: Term,
    constraints: Vec<Term>,
    /// Constraint row scaling; the solver works with `scale[i] * c_i`.
    scale: Vec<f64>,
    var_row: Vec<usize>,
    con_row: Vec<usize>,
    pattern: SkylineMatrix,
}

/// Scratch buffers shared by evaluations.
struct Scratch {
    ws: Workspace,
    local: Vec<f64>,
    plus: Vec<f64>,
    minus: Vec<f64>,
    block: Vec<f64>,
}

impl Scratch {
    fn new() -> Self {
        Self {
            ws: Workspace::default(),
            local: Vec::new(),
            plus: Vec::new(),
            minus: Vec::new(),
            block: Vec::new(),
        }
    }
}

/// Buffers for computing one Newton step.
struct StepWork {
    kkt: SkylineMatrix,
    factor: SkylineMatrix,
    fixed: Vec<bool>,
    rhs: Vec<f64>,
    shift: Vec<f64>,
}

impl StepWork {
    fn new(pattern: &SkylineMatrix, n: usize) -> Self {
        Self {
            kkt: pattern.clone(),
            factor: pattern.clone(),
            fixed: vec![false; n],
            rhs: vec![0.0; pattern.dim()],
            shift: vec![0.0; pattern.dim()],
        }
    }
}

enum InnerOutcome {
    Converged,
    /// Line search could not make progress or the iteration limit was hit.
    Stopped,
    NumericFailure,
}

impl Compiled {
    fn new(nlp: &DiscretizedNlp) -> Result<Self, SolverError> {
        let n = nlp.n_vars();
        let tapes: Vec<Tape> = std::iter::once(&nlp.objective)
            .chain(&nlp.equalities)
            .map(|e| e.compile())
            .collect();
        for tape in &tapes {
            if let Some(&index) = tape.support().last() {
                if index >= n {
                    return Err(SolverError::VariableOutOfRange { index, n });
                }
            }
        }
        // Each constraint row follows the last variable it touches, which
        // keeps the profile close to the banded structure of the variables.
        let m = tapes.len() - 1;
        let mut order: Vec<(usize, bool, usize)> = (0..n).map(|i| (i, false, i)).collect();
        order.extend(
            tapes[1..].iter().enumerate().map(|(r, t)| (t.support().last().copied().unwrap_or(0), true, r)),
        );
        order.sort_unstable();
        let mut var_row = vec![0; n];
        let mut con_row = vec![usize::MAX; m + 1];
        for (row, &(_, is_constraint, k)) in order.iter().enumerate() {
            if is_constraint {
                con_row[k + 1] = row;
            } else {
                var_row[k] = row;
            }
        }
        let mut entries = Vec::new();
        for (t, tape) in tapes.iter().enumerate() {
            let s = tape.support();
            let slots = tape.nonlinear_slots();
            for &a in slots {
                for &b in slots {
                    entries.push((var_row[s[a]], var_row[s[b]]));
                }
            }
            if t > 0 {
                entries.extend(s.iter().map(|&v| (con_row[t], var_row[v])));
            }
        }
        let pattern = SkylineMatrix::with_pattern(n + m, entries);
        let mut terms = tapes.into_iter().enumerate().map(|(t, tape)| {
            let s = tape.support();
            let slots = tape.nonlinear_slots();
            let mut hessian = Vec::with_capacity(slots.len() * (slots.len() + 1) / 2);
            for a in 0..slots.len() {
                for b in 0..=a {
                    hessian.push(pattern.position(var_row[s[slots[a]]], var_row[s[slots[b]]]));
                }
            }
            let (jacobian, diagonal) = if t == 0 {
                (Vec::new(), usize::MAX)
            } else {
                let row = con_row[t];
                (s.iter().map(|&v| pattern.position(row, var_row[v])).collect(), pattern.position(row, row))
            };
            Term { tape, hessian, jacobian, diagonal }
        });
        let objective = terms.next().expect("objective is always present");
        Ok(Self {
            lower: nlp.lower.clone(),
            upper: nlp.upper.clone(),
            objective,
            scale: vec![1.0; m],
            constraints: terms.collect(),
            var_row,
            con_row: con_row[1..].to_vec(),
            pattern,
        })
    }

    fn n(&self) -> usize {
        self.lower.len()
    }

    /// Scales every constraint so its largest gradient entry at the start is
    /// at most one. Steep rows otherwise dominate the penalty term and make
    /// the merit gradient too coarse to resolve near a solution.
    fn scale_rows(&mut self, initial: &[f64]) {
        let mut x = initial.to_vec();
        self.project(&mut x);
        let mut ws = Workspace::default();
        let mut local = Vec::new();
        for (term, scale) in self.constraints.iter().zip(&mut self.scale) {
            local.resize(term.tape.support().len(), 0.0);
            let largest = match term.tape.gradient_local(&x, &mut ws, &mut local) {
                Ok(_) => local.iter().fold(0.0, |a: f64, v| a.max(v.abs())),
                Err(_) => 0.0,
            };
            *scale = if largest.is_finite() { 1.0 / largest.max(1.0) } else { 1.0 };
        }
    }

    /// Largest absolute value of the unscaled constraints.
    fn violation(&self, c: &[f64]) -> f64 {
        c.iter().zip(&self.scale).fold(0.0, |a: f64, (ci, s)| a.max((ci / s).abs()))
    }

    fn project(&self, x: &mut [f64]) {
        for (i, v) in x.iter_mut().enumerate() {
            *v = v.clamp(self.lower[i], self.upper[i]);
        }
    }

    fn objective_value(&self, x: &[f64], s: &mut Scratch) -> Option<f64> {
        self.objective.tape.eval(x, &mut s.ws).ok().filter(|v| v.is_finite())
    }

    fn constraint_values(&self, x: &[f64], s: &mut Scratch, c: &mut [f64]) -> bool {
        for ((ci, term), &scale) in c.iter_mut().zip(&self.constraints).zip(&self.scale) {
            match term.tape.eval(x, &mut s.ws) {
                Ok(v) if v.is_finite() => *ci = v * scale,
                _ => return false,
            }
        }
        true
    }

    /// Merit value and constraint values, or `None` if anything is not finite.
    fn merit(&self, x: &[f64], lam: &[f64], mu: f64, s: &mut Scratch, c: &mut [f64]) -> Option<f64> {
        let f = self.objective_value(x, s)?;
        if !self.constraint_values(x, s, c) {
            return None;
        }
        let penalty: f64 = c.iter().zip(lam).map(|(ci, li)| li * ci + 0.5 * mu * ci * ci).sum();
        Some(f + penalty).filter(|v| v.is_finite())
    }

    /// Writes the merit gradient into `g`; fills `c` as a by-product.
    fn merit_gradient(
        &self,
        x: &[f64],
        lam: &[f64],
        mu: f64,
        s: &mut Scratch,
        c: &mut [f64],
        g: &mut [f64],
    ) -> bool {
        g.iter_mut().for_each(|v| *v = 0.0);
        if self.objective.tape.accumulate_gradient(x, 1.0, &mut s.ws, g).is_err() {
            return false;
        }
        for (i, term) in self.constraints.iter().enumerate() {
            let k = term.tape.support().len();
            s.local.resize(k, 0.0);
            let value = match term.tape.gradient_local(x, &mut s.ws, &mut s.local) {
                Ok(v) if v.is_finite() => v,
                _ => return false,
            };
            let scale = self.scale[i];
            c[i] = value * scale;
            let w = (lam[i] + mu * c[i]) * scale;
            for (&idx, gl) in term.tape.support().iter().zip(&s.local) {
                g[idx] += w * gl;
            }
        }
        g.iter().all(|v| v.is_finite())
    }

    /// Adds `weight * ∇²term` into `h`, using central differences of the
    /// gradient over the term's nonlinear slots.
    fn add_term_hessian(term: &Term, weight: f64, x: &mut [f64], s: &mut Scratch, h: &mut SkylineMatrix) {
        let slots = term.tape.nonlinear_slots();
        if weight == 0.0 || slots.is_empty() {
            return;
        }
        let support = term.tape.support();
        let k = support.len();
        let m = slots.len();
        s.plus.resize(k, 0.0);
        s.minus.resize(k, 0.0);
        s.block.clear();
        s.block.resize(m * m, 0.0);
        for (col, &slot) in slots.iter().enumerate() {
            let idx = support[slot];
            let x0 = x[idx];
            let step = 1e-6 * (1.0 + x0.abs());
            x[idx] = x0 + step;
            let up = term.tape.gradient_local(x, &mut s.ws, &mut s.plus);
            x[idx] = x0 - step;
            let down = term.tape.gradient_local(x, &mut s.ws, &mut s.minus);
            x[idx] = x0;
            if up.is_err() || down.is_err() {
                continue;
            }
            for (row, &other) in slots.iter().enumerate() {
                s.block[row * m + col] = (s.plus[other] - s.minus[other]) / (2.0 * step);
            }
        }
        for a in 0..m {
            for b in 0..=a {
                let v = 0.5 * (s.block[a * m + b] + s.block[b * m + a]);
                if v != 0.0 && v.is_finite() {
                    h.add_at(term.hessian[a * (a + 1) / 2 + b], weight * v);
                }
            }
        }
    }

    /// Assembles the augmented Newton matrix: the Lagrangian Hessian at the
    /// shifted multipliers `λ + μc`, the constraint Jacobian and `-1/μ` on
    /// the constraint diagonal. Eliminating the constraint rows recovers the
    /// Hessian of the merit function without forming `μ JᵀJ`.
    /// The diagonal of the merit Hessian is written into `diagonal`.
    fn assemble_kkt(
        &self,
        x: &[f64],
        lam: &[f64],
        mu: f64,
        s: &mut Scratch,
        k: &mut SkylineMatrix,
        diagonal: &mut [f64],
    ) -> bool {
        k.clear();
        let mut xs = x.to_vec();
        Self::add_term_hessian(&self.objective, 1.0, &mut xs, s, k);
        for (i, term) in self.constraints.iter().enumerate() {
            s.local.resize(term.tape.support().len(), 0.0);
            let scale = self.scale[i];
            let ci = match term.tape.gradient_local(x, &mut s.ws, &mut s.local) {
                Ok(v) if v.is_finite() => v * scale,
                _ => return false,
            };
            for ((&position, &gp), &v) in term.jacobian.iter().zip(&s.local).zip(term.tape.support()) {
                let gp = gp * scale;
                k.add_at(position, gp);
                diagonal[v] += mu * gp * gp;
            }
            k.add_at(term.diagonal, -1.0 / mu);
            Self::add_term_hessian(term, (lam[i] + mu * ci) * scale, &mut xs, s, k);
        }
        for (i, &row) in self.var_row.iter().enumerate() {
            diagonal[i] += k.diagonal(row);
        }
        true
    }

    /// Factors the augmented matrix with `delta` added to the free variable
    /// rows, raising `delta` until the factor has one negative pivot per
    /// constraint, which makes the free block of the merit Hessian positive
    /// definite. Returns `false` if no admissible shift exists.
    fn factor_shifted(
        &self,
        kkt: &SkylineMatrix,
        factor: &mut SkylineMatrix,
        active: &[bool],
        floor: f64,
        delta: &mut f64,
        shift: &mut [f64],
    ) -> bool {
        let m = self.constraints.len();
        loop {
            for (i, &row) in self.var_row.iter().enumerate() {
                shift[row] = if active[i] { 0.0 } else { *delta };
            }
            if matches!(kkt.ldl_into(shift, factor), Ok(negative) if negative == m) {
                return true;
            }
            *delta = (*delta * 10.0).max(floor);
            if !delta.is_finite() || *delta > MAX_SHIFT {
                return false;
            }
        }
    }

    /// Computes a shifted Newton step into `d`. Variables in `active`
    /// follow the diagonally scaled negative gradient. Free variables whose
    /// step leaves the box are pinned to the bound they cross and the rest
    /// are solved again with the pinned moves carried through the coupling.
    #[allow(clippy::too_many_arguments)]
    fn shifted_step(
        &self,
        assembled: &SkylineMatrix,
        kkt: &SkylineMatrix,
        ws: &mut StepWork,
        x: &[f64],
        g: &[f64],
        active: &[bool],
        diagonal: &[f64],
        floor: f64,
        delta: &mut f64,
        d: &mut [f64],
    ) -> bool {
        let n = self.n();
        ws.fixed.copy_from_slice(active);
        ws.kkt.clone_from(kkt);
        for i in 0..n {
            d[i] = if active[i] {
                let scale = diagonal[i].max(0.0) + *delta;
                if scale > 1e-12 { -g[i] / scale } else { -g[i] }
            } else {
                0.0
            };
        }
        for round in 0..=MAX_PIN_ROUNDS {
            if !self.factor_shifted(&ws.kkt, &mut ws.factor, &ws.fixed, floor, delta, &mut ws.shift) {
                return false;
            }
            ws.rhs.iter_mut().for_each(|v| *v = 0.0);
            for i in 0..n {
                if ws.fixed[i] && !active[i] {
                    ws.rhs[self.var_row[i]] = d[i];
                }
            }
            let coupling = assembled.mul_vec(&ws.rhs);
            for (r, v) in ws.rhs.iter_mut().enumerate() {
                *v = -coupling[r];
            }
            for i in 0..n {
                let row = self.var_row[i];
                ws.rhs[row] = match (ws.fixed[i], active[i]) {
                    (false, _) => -g[i] - coupling[row],
                    (true, false) => d[i],
                    (true, true) => 0.0,
                };
            }
            ws.factor.ldl_solve(&mut ws.rhs);
            let mut crossed = false;
            for i in 0..n {
                if ws.fixed[i] {
                    continue;
                }
                d[i] = ws.rhs[self.var_row[i]];
                let target = (x[i] + d[i]).clamp(self.lower[i], self.upper[i]);
                if target != x[i] + d[i] && round < MAX_PIN_ROUNDS {
                    ws.fixed[i] = true;
                    ws.kkt.isolate(self.var_row[i]);
                    d[i] = target - x[i];
                    crossed = true;
                }
            }
            if !crossed {
                break;
            }
        }
        d.iter().all(|v| v.is_finite())
    }

    /// Value of the quadratic model `gᵀs + ½ sᵀ(W + μJᵀJ)s` for a step `s`.
    fn model(&self, assembled: &SkylineMatrix, g: &[f64], step: &[f64], mu: f64, work: &mut [f64]) -> f64 {
        work.iter_mut().for_each(|v| *v = 0.0);
        for (&row, &si) in self.var_row.iter().zip(step) {
            work[row] = si;
        }
        let product = assembled.mul_vec(work);
        let curvature: f64 = self.var_row.iter().zip(step).map(|(&row, si)| si * product[row]).sum();
        let penalty: f64 = self.con_row.iter().map(|&row| product[row] * product[row]).sum();
        let quadratic = curvature + mu * penalty;
        g.iter().zip(step).map(|(gi, si)| gi * si).sum::<f64>() + 0.5 * quadratic
    }

    fn projected_gradient_norm(&self, x: &[f64], g: &[f64]) -> f64 {
        x.iter()
            .zip(g)
            .enumerate()
            .map(|(i, (&xi, &gi))| ((xi - gi).clamp(self.lower[i], self.upper[i]) - xi).abs())
            .fold(0.0, f64::max)
    }

    /// Minimizes the merit over the box by projected Newton steps. Variables
    /// in the ε-active set follow the negative gradient; the rest take a
    /// Levenberg-Marquardt step whose shift adapts to how well the quadratic
    /// model predicts the actual decrease.
    #[allow(clippy::too_many_arguments)]
    fn inner(
        &self,
        x: &mut Vec<f64>,
        lam: &[f64],
        mu: f64,
        tolerance: f64,
        max_iterations: usize,
        s: &mut Scratch,
        record: &mut OuterRecord,
        iterations: &mut usize,
    ) -> InnerOutcome {
        let n = self.n();
        let m = self.constraints.len();
        let mut c = vec![0.0; m];
        let mut c_trial = vec![0.0; m];
        let mut g = vec![0.0; n];
        let mut assembled = self.pattern.clone();
        let mut kkt = self.pattern.clone();
        let mut work = StepWork::new(&self.pattern, n);
        let mut d = vec![0.0; n];
        let mut step = vec![0.0; n];
        let mut trial = vec![0.0; n];
        let mut active = vec![false; n];
        let mut diagonal = vec![0.0; n];
        let mut delta = 0.0;

        let Some(mut phi) = self.merit(x, lam, mu, s, &mut c) else {
            return InnerOutcome::NumericFailure;
        };
        record.merit.push(phi);
        for _ in 0..max_iterations {
            if !self.merit_gradient(x, lam, mu, s, &mut c, &mut g) {
                return InnerOutcome::NumericFailure;
            }
            let pg = self.projected_gradient_norm(x, &g);
            if pg <= tolerance {
                return InnerOutcome::Converged;
            }
            let eps = pg.min(1e-3);
            for i in 0..n {
                let (lo, hi) = (self.lower[i], self.upper[i]);
                active[i] = lo == hi
                    || (x[i] <= lo + eps && g[i] > 0.0)
                    || (x[i] >= hi - eps && g[i] < 0.0);
            }
            diagonal.iter_mut().for_each(|v| *v = 0.0);
            if !self.assemble_kkt(x, lam, mu, s, &mut assembled, &mut diagonal) {
                return InnerOutcome::NumericFailure;
            }
            kkt.clone_from(&assembled);
            let mut max_diag: f64 = 0.0;
            for i in 0..n {
                let row = self.var_row[i];
                if active[i] {
                    kkt.isolate(row);
                } else {
                    max_diag = max_diag.max(kkt.diagonal(row).abs());
                }
            }
            let floor = 1e-8 * (1.0 + max_diag);

            let mut accepted = None;
            while accepted.is_none() {
                if !self.shifted_step(&assembled, &kkt, &mut work, x, &g, &active, &diagonal, floor, &mut delta, &mut d) {
                    break;
                }
                for i in 0..n {
                    trial[i] = (x[i] + d[i]).clamp(self.lower[i], self.upper[i]);
                    step[i] = trial[i] - x[i];
                }
                let predicted = -self.model(&assembled, &g, &step, mu, &mut work.rhs);
                let linear: f64 = g.iter().zip(&step).map(|(gi, si)| gi * si).sum();
                if linear < 0.0 && predicted > 0.0 {
                    if let Some(value) = self.merit(&trial, lam, mu, s, &mut c_trial) {
                        let actual = phi - value;
                        // Below rounding level the ratio is noise; any
                        // non-increasing step is then acceptable.
                        let negligible = predicted <= 1e-13 * (1.0 + phi.abs());
                        if actual >= 0.0 && (negligible || actual >= 1e-4 * predicted) {
                            if actual >= 0.75 * predicted {
                                delta = if delta / 10.0 < floor { 0.0 } else { delta / 10.0 };
                            }
                            accepted = Some(value);
                            break;
                        }
                    }
                }
                delta = (delta * 10.0).max(floor);
                if delta > MAX_SHIFT {
                    break;
                }
            }
            let Some(value) = accepted else {
                return InnerOutcome::Stopped;
            };
            std::mem::swap(x, &mut trial);
            phi = value;
            record.merit.push(phi);
            *iterations += 1;
        }
        if self.merit_gradient(x, lam, mu, s, &mut c, &mut g)
            && self.projected_gradient_norm(x, &g) <= tolerance
        {
            InnerOutcome::Converged
        } else {
            InnerOutcome::Stopped
        }
    }

    fn solve_from(&self, initial: &[f64], settings: &SolverSettings, log: &mut SolveLog) -> SolveResult {
        let n = self.n();
        let m = self.constraints.len();
        let mut s = Scratch::new();
        let mut x = initial.to_vec();
        self.project(&mut x);
        let mut lam = vec![0.0; m];
        let mut mu = settings.initial_penalty;
        let mut c = vec![0.0; m];
        let mut g = vec![0.0; n];
        let mut previous_violation = f64::INFINITY;
        let mut inner_iterations = 0;
        let result = |status, x: &[f64], violation, pg, outer, inner, mu, s: &mut Scratch| SolveResult {
            status,
            objective: self.objective_value(x, s).unwrap_or(f64::NAN),
            x: x.to_vec(),
            max_violation: violation,
            projected_gradient: pg,
            outer_iterations: outer,
            inner_iterations: inner,
            wall_time: 0.0,
            penalty: mu,
        };

        for outer in 1..=settings.max_outer_iterations {
            let mut record = OuterRecord { penalty: mu, ..OuterRecord::default() };
            let outcome = self.inner(
                &mut x,
                &lam,
                mu,
                settings.optimality_tolerance,
                settings.max_inner_iterations,
                &mut s,
                &mut record,
                &mut inner_iterations,
            );
            if matches!(outcome, InnerOutcome::NumericFailure)
                || !self.merit_gradient(&x, &lam, mu, &mut s, &mut c, &mut g)
            {
                log.outer.push(record);
                return result(SolveStatus::NumericFailure, &x, f64::NAN, f64::NAN, outer, inner_iterations, mu, &mut s);
            }
            let violation = self.violation(&c);
            let pg = self.projected_gradient_norm(&x, &g);
            record.max_violation = violation;
            record.projected_gradient = pg;
            log.outer.push(record);
            log::debug!("outer {outer}: mu {mu:.1e} violation {violation:.3e} pg {pg:.3e}");

            if violation <= settings.feasibility_tolerance && pg <= settings.optimality_tolerance {
                return result(SolveStatus::Optimal, &x, violation, pg, outer, inner_iterations, mu, &mut s);
            }
            if mu >= settings.penalty_cap && violation > INFEASIBILITY_THRESHOLD {
                return result(SolveStatus::Infeasible, &x, violation, pg, outer, inner_iterations, mu, &mut s);
            }
            if outer == settings.max_outer_iterations {
                return result(SolveStatus::IterationLimit, &x, violation, pg, outer, inner_iterations, mu, &mut s);
            }
            for (l, ci) in lam.iter_mut().zip(&c) {
                *l += mu * ci;
            }
            if violation > settings.feasibility_tolerance && violation > 0.25 * previous_violation {
                mu = (mu * settings.penalty_growth).min(settings.penalty_cap);
            }
            previous_violation = violation;
        }
        unreachable!("the final outer iteration always returns")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::Expr;

    fn x(i: usize) -> Expr {
        Expr::var(i)
    }

    #[test]
    fn bound_active_minimum() {
        let mut nlp = DiscretizedNlp::new(1);
        nlp.lower[0] = 0.0;
        nlp.upper[0] = 1.0;
        nlp.objective = (x(0) - 2.0).powi(2);
        let r = solve(&nlp, &[0.5], &SolverSettings::default()).unwrap();
        assert_eq!(r.status, SolveStatus::Optimal);
        assert!((r.x[0] - 1.0).abs() < 1e-9);
        assert!((r.objective - 1.0).abs() < 1e-9);
    }

    #[test]
    fn equality_projection() {
        let mut nlp = DiscretizedNlp::new(1);
        nlp.objective = x(0).powi(2);
        nlp.equalities.push(x(0) - 3.0);
        let r = solve(&nlp, &[0.0], &SolverSettings::default()).unwrap();
        assert_eq!(r.status, SolveStatus::Optimal);
        assert!(r.max_violation <= 1e-6);
        assert!((r.objective - 9.0).abs() < 1e-5);
    }

    #[test]
    fn inconsistent_equalities_are_infeasible() {
        let mut nlp = DiscretizedNlp::new(1);
        nlp.objective = x(0);
        nlp.equalities.push(x(0) - 1.0);
        nlp.equalities.push(x(0) - 2.0);
        let r = solve(&nlp, &[0.0], &SolverSettings::default()).unwrap();
        assert_eq!(r.status, SolveStatus::Infeasible);
    }

    #[test]
    fn nonconvex_objective_with_circle_constraint() {
        // min x0 + x1 on the unit circle: optimum -sqrt(2).
        let mut nlp = DiscretizedNlp::new(2);
        nlp.objective = x(0) + x(1);
        nlp.equalities.push(x(0).powi(2) + x(1).powi(2) - 1.0);
        let r = solve(&nlp, &[0.3, -0.2], &SolverSettings::default()).unwrap();
        assert_eq!(r.status, SolveStatus::Optimal);
        assert!((r.objective + 2f64.sqrt()).abs() < 1e-6);
    }

    #[test]
    fn rejects_bad_inputs() {
        let nlp = DiscretizedNlp::new(2);
        assert!(matches!(
            solve(&nlp, &[0.0], &SolverSettings::default()),
            Err(SolverError::DimensionMismatch { expected: 2, found: 1 })
        ));
        let settings = SolverSettings { penalty_growth: 1.0, ..SolverSettings::default() };
        assert!(matches!(solve(&nlp, &[0.0, 0.0], &settings), Err(SolverError::InvalidSettings(_))));
    }

    #[test]
    fn non_finite_start_is_a_numeric_failure() {
        let mut nlp = DiscretizedNlp::new(1);
        nlp.objective = x(0).ln();
        let r = solve(&nlp, &[-1.0], &SolverSettings::default()).unwrap();
        assert_eq!(r.status, SolveStatus::NumericFailure);
    }
}
