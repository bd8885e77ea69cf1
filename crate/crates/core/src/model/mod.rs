//! Differential-algebraic disjunctive models.
//!
//! A [`DagdpModel`] is a multi-stage optimal control problem in which every
//! stage selects exactly one [`Disjunct`] (a dynamic mode) out of its
//! disjunction. Extra logic linking the selections across stages lives in the
//! model's [`Proposition`]s.
//!
//! All expressions in a model are written over one symbol table. Symbol 0 is
//! always the time `t`; the remaining symbols follow declaration order, so
//! adding a symbol never renumbers the ones already declared.

mod format;
mod logic;

pub use format::{parse_model, serialize_model, FormatError, FORMAT_TAG};
pub use logic::{BooleanAssignment, LogicError, Proposition};

use thiserror::Error;

use crate::expr::Expr;

/// Guard on the number of Boolean assignments that may be enumerated.
pub const MAX_ENUMERATION: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("stage times must be strictly increasing and cover at least one stage")]
    InvalidStageTimes,
    #[error("expected {expected} disjunctions (one per stage), found {found}")]
    StageCountMismatch { expected: usize, found: usize },
    #[error("stage {stage} has no disjuncts")]
    EmptyDisjunction { stage: usize },
    #[error("disjunct ({stage}, {disjunct}) has {found} right-hand sides for {expected} states")]
    RhsCountMismatch {
        stage: usize,
        disjunct: usize,
        expected: usize,
        found: usize,
    },
    #[error("expression references symbol {index} but only {len} symbols are declared")]
    UnknownSymbol { index: usize, len: usize },
    #[error("invalid bounds for `{name}`")]
    InvalidBounds { name: String },
    #[error("invalid or duplicate symbol name `{name}`")]
    InvalidName { name: String },
    #[error("{count} assignments exceed the enumeration limit of {MAX_ENUMERATION}")]
    LatticeTooLarge { count: u128 },
    #[error(transparent)]
    Logic(#[from] LogicError),
}

#[derive(Debug, Clone, PartialEq)]
pub enum SymbolKind {
    Time,
    State { lower: f64, upper: f64, initial: f64 },
    Control { lower: f64, upper: f64, fixed_initial: Option<f64> },
    Algebraic { lower: f64, upper: f64 },
    Parameter { lower: f64, upper: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Symbol {
    pub name: String,
    pub kind: SymbolKind,
}

impl Symbol {
    /// Lower and upper bound; time is unbounded.
    pub fn bounds(&self) -> (f64, f64) {
        match self.kind {
            SymbolKind::Time => (f64::NEG_INFINITY, f64::INFINITY),
            SymbolKind::State { lower, upper, .. }
            | SymbolKind::Control { lower, upper, .. }
            | SymbolKind::Algebraic { lower, upper }
            | SymbolKind::Parameter { lower, upper } => (lower, upper),
        }
    }
}

/// One dynamic mode: `dx/dt = rhs(x, u, y, p, t)` plus optional algebraic
/// equations `g(x, u, y, p, t) = 0`, enforced only when the mode is selected.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Disjunct {
    /// One right-hand side per state, in state declaration order.
    pub rhs: Vec<Expr>,
    pub algebraic: Vec<Expr>,
}

impl Disjunct {
    pub fn new(rhs: Vec<Expr>) -> Self {
        Self { rhs, algebraic: Vec::new() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Minimize,
    Maximize,
}

/// Integral objective `sense ∫ integrand dt` over the whole horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct Objective {
    pub sense: Sense,
    pub integrand: Expr,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DagdpModel {
    pub name: String,
    /// Stage boundaries `t_0 < t_1 < ... < t_S`.
    pub stage_times: Vec<f64>,
    pub symbols: Vec<Symbol>,
    /// Equalities enforced at every collocation point regardless of mode.
    pub global_constraints: Vec<Expr>,
    /// One disjunction per stage.
    pub stages: Vec<Vec<Disjunct>>,
    pub propositions: Vec<Proposition>,
    pub objective: Objective,
}

impl DagdpModel {
    /// An empty model over the given stage boundaries with a zero objective.
    pub fn new(name: impl Into<String>, stage_times: Vec<f64>) -> Self {
        let n_stages = stage_times.len().saturating_sub(1);
        Self {
            name: name.into(),
            stage_times,
            symbols: vec![Symbol { name: "t".into(), kind: SymbolKind::Time }],
            global_constraints: Vec::new(),
            stages: vec![Vec::new(); n_stages],
            propositions: Vec::new(),
            objective: Objective {
                sense: Sense::Minimize,
                integrand: Expr::constant(0.0),
            },
        }
    }

    pub fn time(&self) -> Expr {
        Expr::var(0)
    }

    fn declare(&mut self, name: &str, kind: SymbolKind) -> Expr {
        self.symbols.push(Symbol { name: name.into(), kind });
        Expr::var(self.symbols.len() - 1)
    }

    pub fn add_state(&mut self, name: &str, lower: f64, upper: f64, initial: f64) -> Expr {
        self.declare(name, SymbolKind::State { lower, upper, initial })
    }

    pub fn add_control(
        &mut self,
        name: &str,
        lower: f64,
        upper: f64,
        fixed_initial: Option<f64>,
    ) -> Expr {
        self.declare(name, SymbolKind::Control { lower, upper, fixed_initial })
    }

    pub fn add_algebraic(&mut self, name: &str, lower: f64, upper: f64) -> Expr {
        self.declare(name, SymbolKind::Algebraic { lower, upper })
    }

    pub fn add_parameter(&mut self, name: &str, lower: f64, upper: f64) -> Expr {
        self.declare(name, SymbolKind::Parameter { lower, upper })
    }

    pub fn add_disjunct(&mut self, stage: usize, disjunct: Disjunct) {
        self.stages[stage].push(disjunct);
    }

    pub fn n_stages(&self) -> usize {
        self.stages.len()
    }

    pub fn disjunct_counts(&self) -> Vec<usize> {
        self.stages.iter().map(Vec::len).collect()
    }

    pub fn symbol_index(&self, name: &str) -> Option<usize> {
        self.symbols.iter().position(|s| s.name == name)
    }

    fn indices_where(&self, pred: impl Fn(&SymbolKind) -> bool) -> Vec<usize> {
        self.symbols
            .iter()
            .enumerate()
            .filter(|(_, s)| pred(&s.kind))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn state_indices(&self) -> Vec<usize> {
        self.indices_where(|k| matches!(k, SymbolKind::State { .. }))
    }

    pub fn control_indices(&self) -> Vec<usize> {
        self.indices_where(|k| matches!(k, SymbolKind::Control { .. }))
    }

    pub fn algebraic_indices(&self) -> Vec<usize> {
        self.indices_where(|k| matches!(k, SymbolKind::Algebraic { .. }))
    }

    pub fn parameter_indices(&self) -> Vec<usize> {
        self.indices_where(|k| matches!(k, SymbolKind::Parameter { .. }))
    }

    /// Checks every structural invariant of the model.
    pub fn validate(&self) -> Result<(), ModelError> {
        let times = &self.stage_times;
        if times.len() < 2 || times.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(ModelError::InvalidStageTimes);
        }
        if self.stages.len() != times.len() - 1 {
            return Err(ModelError::StageCountMismatch {
                expected: times.len() - 1,
                found: self.stages.len(),
            });
        }
        if self.symbols.first().map(|s| &s.kind) != Some(&SymbolKind::Time) {
            return Err(ModelError::InvalidName { name: "t".into() });
        }
        for (i, sym) in self.symbols.iter().enumerate() {
            let name_ok = !sym.name.is_empty()
                && sym.name.chars().next().is_some_and(|c| c.is_alphabetic() || c == '_')
                && sym.name.chars().all(|c| c.is_alphanumeric() || c == '_')
                && sym.name.parse::<f64>().is_err()
                && self.symbols[..i].iter().all(|o| o.name != sym.name);
            if !name_ok || (i > 0 && matches!(sym.kind, SymbolKind::Time)) {
                return Err(ModelError::InvalidName { name: sym.name.clone() });
            }
            let (lo, hi) = sym.bounds();
            let bad = lo.is_nan()
                || hi.is_nan()
                || lo > hi
                || match sym.kind {
                    SymbolKind::State { initial, .. } => !(lo <= initial && initial <= hi),
                    SymbolKind::Control { fixed_initial: Some(v), .. } => !(lo <= v && v <= hi),
                    _ => false,
                };
            if bad {
                return Err(ModelError::InvalidBounds { name: sym.name.clone() });
            }
        }
        let n_states = self.state_indices().len();
        let check = |e: &Expr| match e.max_var_index() {
            Some(i) if i >= self.symbols.len() => Err(ModelError::UnknownSymbol {
                index: i,
                len: self.symbols.len(),
            }),
            _ => Ok(()),
        };
        for (s, stage) in self.stages.iter().enumerate() {
            if stage.is_empty() {
                return Err(ModelError::EmptyDisjunction { stage: s });
            }
            for (r, d) in stage.iter().enumerate() {
                if d.rhs.len() != n_states {
                    return Err(ModelError::RhsCountMismatch {
                        stage: s,
                        disjunct: r,
                        expected: n_states,
                        found: d.rhs.len(),
                    });
                }
                d.rhs.iter().chain(&d.algebraic).try_for_each(check)?;
            }
        }
        self.global_constraints.iter().try_for_each(check)?;
        check(&self.objective.integrand)?;
        let counts = self.disjunct_counts();
        for p in &self.propositions {
            p.validate(&counts)?;
        }
        Ok(())
    }

    /// True iff `assignment` satisfies every proposition of the model.
    pub fn is_feasible_configuration(&self, assignment: &BooleanAssignment) -> Result<bool, LogicError> {
        assignment.check_against(&self.disjunct_counts())?;
        for p in &self.propositions {
            if !p.evaluate(assignment)? {
                return Ok(false);
            }
        }
        Ok(true)
    }

    /// Number of Boolean assignments in the full Cartesian product.
    pub fn assignment_count(&self) -> u128 {
        self.stages.iter().map(|s| s.len() as u128).product()
    }

    /// All logically feasible assignments, in lexicographic order of the
    /// per-stage disjunct indices.
    pub fn enumerate_feasible(&self) -> Result<Vec<BooleanAssignment>, ModelError> {
        let count = self.assignment_count();
        if count > MAX_ENUMERATION as u128 {
            return Err(ModelError::LatticeTooLarge { count });
        }
        let counts = self.disjunct_counts();
        let mut out = Vec::new();
        if counts.contains(&0) {
            return Ok(out);
        }
        let mut modes = vec![0usize; counts.len()];
        loop {
            let a = BooleanAssignment::new(modes.clone());
            if self.is_feasible_configuration(&a)? {
                out.push(a);
            }
            // odometer, last stage varies fastest
            let mut pos = counts.len();
            loop {
                if pos == 0 {
                    return Ok(out);
                }
                pos -= 1;
                modes[pos] += 1;
                if modes[pos] < counts[pos] {
                    break;
                }
                modes[pos] = 0;
            }
        }
    }
}
