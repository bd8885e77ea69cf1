//! Direct transcription by Radau collocation on finite elements.
//!
//! Each stage is split into `elements_per_stage` equal elements. Inside an
//! element every differential state is a polynomial through the element's
//! start node (τ = 0) and the Radau nodes τ_1 < ... < τ_n = 1; the ODE is
//! enforced at the Radau nodes. The start node of an element is the last
//! node of the previous element (the same NLP variable), which gives
//! continuity across elements and stages without extra equations.
//!
//! The integral objective is carried by one extra quadrature state `q` with
//! `dq/dt = integrand`, collocated like every other state.
//!
//! Flat layout (time-major, so the constraint Jacobian is banded):
//!
//! ```text
//! [ initial node: x_0.., q_0 ]
//! [ element 0: node 1 (x.., q, y..), ..., node n (x.., q, y..), u.. ]
//! ...
//! [ element E-1: ... ]
//! [ parameters p.. ]
//! ```

use thiserror::Error;

use crate::expr::Expr;
use crate::model::{BooleanAssignment, DagdpModel, LogicError, ModelError, Sense, SymbolKind};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TranscriptionError {
    #[error("collocation order {0} is not supported (expected 1..=5)")]
    UnsupportedOrder(usize),
    #[error("a collocation scheme needs at least one element per stage")]
    NoElements,
    #[error("collocation nodes must be distinct")]
    DuplicateNodes,
    #[error("collocation nodes must lie in (0, 1]")]
    InvalidNodes,
    #[error("configuration {0} violates the model's logic")]
    InfeasibleConfiguration(BooleanAssignment),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Logic(#[from] LogicError),
}

/// Legendre polynomial `P_n(x)` and its derivative.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let (mut p_prev, mut p) = (1.0, x);
    let (mut d_prev, mut d) = (0.0, 1.0);
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 1..n {
        let kf = k as f64;
        let p_next = ((2.0 * kf + 1.0) * x * p - kf * p_prev) / (kf + 1.0);
        let d_next = d_prev + (2.0 * kf + 1.0) * p;
        p_prev = p;
        p = p_next;
        d_prev = d;
        d = d_next;
    }
    (p, d)
}

/// Radau nodes on (0, 1], ascending, with the last node exactly 1.
///
/// The nodes are the roots of `P_n(x) - P_{n-1}(x)` mapped from [-1, 1] to
/// [0, 1]. Interior roots are found by Newton iteration with deflation of the
/// roots already found, starting left of the smallest root.
pub fn radau_points(n: usize) -> Result<Vec<f64>, TranscriptionError> {
    if !(1..=5).contains(&n) {
        return Err(TranscriptionError::UnsupportedOrder(n));
    }
    let poly = |x: f64| {
        let (pn, dn) = legendre(n, x);
        let (pm, dm) = legendre(n - 1, x);
        (pn - pm, dn - dm)
    };
    let mut roots = vec![1.0];
    let mut x = -1.0;
    for _ in 1..n {
        for _ in 0..100 {
            let (p, dp) = poly(x);
            let deflation: f64 = roots.iter().map(|r| 1.0 / (x - r)).sum();
            let step = p / (dp - p * deflation);
            x -= step;
            if step.abs() < 1e-15 {
                break;
            }
        }
        roots.push(x);
        // restart just left of the new root
        x -= 1e-3;
    }
    let mut tau: Vec<f64> = roots.iter().map(|r| 0.5 * (r + 1.0)).collect();
    tau.sort_by(f64::total_cmp);
    *tau.last_mut().expect("n >= 1") = 1.0;
    Ok(tau)
}

/// Lagrange differentiation matrix over the nodes `{0} ∪ points`.
///
/// Entry `[j][k]` is `dℓ_j/dτ` at node `points[k]`, where `ℓ_j` is the
/// Lagrange basis polynomial of node `j` (node 0 is τ = 0). The result has
/// `points.len() + 1` rows and `points.len()` columns.
pub fn differentiation_matrix(points: &[f64]) -> Result<Vec<Vec<f64>>, TranscriptionError> {
    if points.iter().any(|&p| !(p > 0.0 && p <= 1.0)) {
        return Err(TranscriptionError::InvalidNodes);
    }
    let nodes: Vec<f64> = std::iter::once(0.0).chain(points.iter().copied()).collect();
    for (i, a) in nodes.iter().enumerate() {
        if nodes[i + 1..].iter().any(|b| (a - b).abs() <= 1e-14) {
            return Err(TranscriptionError::DuplicateNodes);
        }
    }
    let m = nodes.len();
    // barycentric weights
    let w: Vec<f64> = (0..m)
        .map(|j| 1.0 / (0..m).filter(|&l| l != j).map(|l| nodes[j] - nodes[l]).product::<f64>())
        .collect();
    let mut d = vec![vec![0.0; m - 1]; m];
    for k in 1..m {
        for j in 0..m {
            d[j][k - 1] = if j == k {
                (0..m).filter(|&l| l != k).map(|l| 1.0 / (nodes[k] - nodes[l])).sum()
            } else {
                (w[j] / w[k]) / (nodes[k] - nodes[j])
            };
        }
    }
    Ok(d)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct CollocationScheme {
    pub elements_per_stage: usize,
    pub points: usize,
}

impl CollocationScheme {
    pub fn new(elements_per_stage: usize, points: usize) -> Self {
        Self { elements_per_stage, points }
    }

    pub fn validate(&self) -> Result<(), TranscriptionError> {
        if self.elements_per_stage == 0 {
            return Err(TranscriptionError::NoElements);
        }
        if !(1..=5).contains(&self.points) {
            return Err(TranscriptionError::UnsupportedOrder(self.points));
        }
        Ok(())
    }
}

impl Default for CollocationScheme {
    fn default() -> Self {
        Self::new(30, 3)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarRole {
    /// Model state, numbered in state declaration order.
    State(usize),
    Quadrature,
    Algebraic(usize),
    Control(usize),
    Parameter(usize),
}

/// Where a flat NLP variable came from.
#[derive(Debug, Clone, PartialEq)]
pub struct VarInfo {
    pub role: VarRole,
    pub name: String,
    pub stage: usize,
    /// Element index within the stage.
    pub element: usize,
    /// Node index within the element; 0 is the element's start node.
    pub point: usize,
}

/// Index arithmetic for a transcribed model.
#[derive(Debug, Clone, PartialEq)]
pub struct CollocationLayout {
    pub scheme: CollocationScheme,
    pub tau: Vec<f64>,
    pub n_states: usize,
    pub n_algebraic: usize,
    pub n_controls: usize,
    pub n_parameters: usize,
    /// Start time and width of every element, in time order.
    pub element_start: Vec<f64>,
    pub element_width: Vec<f64>,
}

impl CollocationLayout {
    /// Differential states per node, including the quadrature state.
    pub fn n_differential(&self) -> usize {
        self.n_states + 1
    }

    fn node_block(&self) -> usize {
        self.n_differential() + self.n_algebraic
    }

    fn element_block(&self) -> usize {
        self.scheme.points * self.node_block() + self.n_controls
    }

    pub fn n_elements(&self) -> usize {
        self.element_start.len()
    }

    pub fn n_vars(&self) -> usize {
        self.n_differential() + self.n_elements() * self.element_block() + self.n_parameters
    }

    fn node_base(&self, element: usize, point: usize) -> usize {
        assert!(point >= 1 && point <= self.scheme.points);
        self.n_differential() + element * self.element_block() + (point - 1) * self.node_block()
    }

    /// Flat index of differential state `i` (the quadrature state is
    /// `n_states`) at node `point` of global element `element`. Node 0 is the
    /// previous element's last node, or the initial node for element 0.
    pub fn differential_index(&self, element: usize, point: usize, i: usize) -> usize {
        assert!(i < self.n_differential());
        match (element, point) {
            (0, 0) => i,
            (e, 0) => self.differential_index(e - 1, self.scheme.points, i),
            (e, k) => self.node_base(e, k) + i,
        }
    }

    pub fn quadrature_index(&self, element: usize, point: usize) -> usize {
        self.differential_index(element, point, self.n_states)
    }

    pub fn algebraic_index(&self, element: usize, point: usize, i: usize) -> usize {
        assert!(i < self.n_algebraic);
        self.node_base(element, point) + self.n_differential() + i
    }

    pub fn control_index(&self, element: usize, c: usize) -> usize {
        assert!(c < self.n_controls);
        self.n_differential() + element * self.element_block() + self.scheme.points * self.node_block() + c
    }

    pub fn parameter_index(&self, p: usize) -> usize {
        assert!(p < self.n_parameters);
        self.n_differential() + self.n_elements() * self.element_block() + p
    }

    /// Absolute time of node `point` in global element `element`.
    pub fn node_time(&self, element: usize, point: usize) -> f64 {
        let tau = if point == 0 { 0.0 } else { self.tau[point - 1] };
        self.element_start[element] + self.element_width[element] * tau
    }

    /// Stage of a global element.
    pub fn stage_of(&self, element: usize) -> usize {
        element / self.scheme.elements_per_stage
    }

    /// `(time, value)` of differential state `i` at every node in time order.
    pub fn trajectory(&self, x: &[f64], i: usize) -> Vec<(f64, f64)> {
        let mut out = vec![(self.node_time(0, 0), x[self.differential_index(0, 0, i)])];
        for e in 0..self.n_elements() {
            for k in 1..=self.scheme.points {
                out.push((self.node_time(e, k), x[self.differential_index(e, k, i)]));
            }
        }
        out
    }
}

/// An algebraic NLP: minimize `objective` subject to `equalities = 0` and
/// variable bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscretizedNlp {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub objective: Expr,
    pub equalities: Vec<Expr>,
    pub variables: Vec<VarInfo>,
    pub layout: Option<CollocationLayout>,
}

impl DiscretizedNlp {
    /// A bare NLP with `n` unbounded variables, zero objective and no
    /// constraints.
    pub fn new(n: usize) -> Self {
        Self {
            lower: vec![f64::NEG_INFINITY; n],
            upper: vec![f64::INFINITY; n],
            objective: Expr::constant(0.0),
            equalities: Vec::new(),
            variables: (0..n)
                .map(|i| VarInfo {
                    role: VarRole::Parameter(i),
                    name: format!("x{i}"),
                    stage: 0,
                    element: 0,
                    point: 0,
                })
                .collect(),
            layout: None,
        }
    }

    pub fn n_vars(&self) -> usize {
        self.lower.len()
    }

    pub fn n_equalities(&self) -> usize {
        self.equalities.len()
    }
}

/// Number of collocation equations (model states plus quadrature) that
/// `transcribe` emits for `model` under `scheme`.
pub fn collocation_equation_count(model: &DagdpModel, scheme: &CollocationScheme) -> usize {
    model.n_stages() * scheme.elements_per_stage * scheme.points * (model.state_indices().len() + 1)
}

/// Variable layout of the collocation NLP for `model` under `scheme`. Every
/// stage is split into equal elements.
pub fn collocation_layout(
    model: &DagdpModel,
    scheme: &CollocationScheme,
) -> Result<CollocationLayout, TranscriptionError> {
    scheme.validate()?;
    let tau = radau_points(scheme.points)?;
    let nfe = scheme.elements_per_stage;
    let mut element_start = Vec::new();
    let mut element_width = Vec::new();
    for s in 0..model.n_stages() {
        let (t0, t1) = (model.stage_times[s], model.stage_times[s + 1]);
        let h = (t1 - t0) / nfe as f64;
        for i in 0..nfe {
            element_start.push(t0 + h * i as f64);
            element_width.push(h);
        }
    }
    Ok(CollocationLayout {
        scheme: *scheme,
        tau,
        n_states: model.state_indices().len(),
        n_algebraic: model.algebraic_indices().len(),
        n_controls: model.control_indices().len(),
        n_parameters: model.parameter_indices().len(),
        element_start,
        element_width,
    })
}

/// Builds the NLP for one fixed, logically feasible configuration.
///
/// Equalities are emitted in this order: initial conditions (states, then
/// quadrature), then per element and node: collocation equations for every
/// differential state, the selected disjunct's algebraic equations and the
/// global constraints.
pub fn transcribe(
    model: &DagdpModel,
    assignment: &BooleanAssignment,
    scheme: &CollocationScheme,
) -> Result<DiscretizedNlp, TranscriptionError> {
    scheme.validate()?;
    model.validate()?;
    if !model.is_feasible_configuration(assignment)? {
        return Err(TranscriptionError::InfeasibleConfiguration(assignment.clone()));
    }
    let layout = collocation_layout(model, scheme)?;
    let dmat = differentiation_matrix(&layout.tau)?;

    let states = model.state_indices();
    let controls = model.control_indices();
    let algebraics = model.algebraic_indices();
    let parameters = model.parameter_indices();

    let nfe = scheme.elements_per_stage;
    let n = layout.n_vars();
    let nd = layout.n_differential();

    // symbol number -> position within its kind
    let mut kind_pos = vec![0usize; model.symbols.len()];
    for list in [&states, &controls, &algebraics, &parameters] {
        for (pos, &sym) in list.iter().enumerate() {
            kind_pos[sym] = pos;
        }
    }

    let mut lower = vec![f64::NEG_INFINITY; n];
    let mut upper = vec![f64::INFINITY; n];
    let mut variables: Vec<Option<VarInfo>> = vec![None; n];
    let mut set_var = |idx: usize, role: VarRole, name: &str, bounds: (f64, f64), e: usize, k: usize| {
        lower[idx] = bounds.0;
        upper[idx] = bounds.1;
        variables[idx] = Some(VarInfo {
            role,
            name: name.to_string(),
            stage: e / nfe,
            element: e % nfe,
            point: k,
        });
    };
    let unbounded = (f64::NEG_INFINITY, f64::INFINITY);
    for e in 0..layout.n_elements() {
        let first_k = if e == 0 { 0 } else { 1 };
        for k in first_k..=scheme.points {
            for (i, &sym) in states.iter().enumerate() {
                let s = &model.symbols[sym];
                set_var(layout.differential_index(e, k, i), VarRole::State(i), &s.name, s.bounds(), e, k);
            }
            set_var(layout.quadrature_index(e, k), VarRole::Quadrature, "q", unbounded, e, k);
            if k > 0 {
                for (i, &sym) in algebraics.iter().enumerate() {
                    let s = &model.symbols[sym];
                    set_var(layout.algebraic_index(e, k, i), VarRole::Algebraic(i), &s.name, s.bounds(), e, k);
                }
            }
        }
        for (c, &sym) in controls.iter().enumerate() {
            let s = &model.symbols[sym];
            let mut bounds = s.bounds();
            if let (0, SymbolKind::Control { fixed_initial: Some(v), .. }) = (e, &s.kind) {
                bounds = (*v, *v);
            }
            set_var(layout.control_index(e, c), VarRole::Control(c), &s.name, bounds, e, 0);
        }
    }
    for (p, &sym) in parameters.iter().enumerate() {
        let s = &model.symbols[sym];
        set_var(layout.parameter_index(p), VarRole::Parameter(p), &s.name, s.bounds(), 0, 0);
    }
    let variables: Vec<VarInfo> = variables
        .into_iter()
        .map(|v| v.expect("every flat index is assigned"))
        .collect();

    // Model expression -> NLP expression at node (e, k).
    let at_node = |expr: &Expr, e: usize, k: usize| -> Expr {
        let t = layout.node_time(e, k);
        expr.map_vars(&mut |sym| match model.symbols[sym].kind {
            SymbolKind::Time => Expr::constant(t),
            SymbolKind::State { .. } => Expr::var(layout.differential_index(e, k, kind_pos[sym])),
            SymbolKind::Control { .. } => Expr::var(layout.control_index(e, kind_pos[sym])),
            SymbolKind::Algebraic { .. } => Expr::var(layout.algebraic_index(e, k, kind_pos[sym])),
            SymbolKind::Parameter { .. } => Expr::var(layout.parameter_index(kind_pos[sym])),
        })
    };

    let mut equalities = Vec::with_capacity(nd + collocation_equation_count(model, scheme));
    for (i, &sym) in states.iter().enumerate() {
        let SymbolKind::State { initial, .. } = model.symbols[sym].kind else {
            unreachable!()
        };
        equalities.push(Expr::var(layout.differential_index(0, 0, i)) - initial);
    }
    equalities.push(Expr::var(layout.quadrature_index(0, 0)));

    for e in 0..layout.n_elements() {
        let disjunct = &model.stages[layout.stage_of(e)][assignment.modes()[layout.stage_of(e)]];
        let h = layout.element_width[e];
        for k in 1..=scheme.points {
            for i in 0..nd {
                // Columns of the differentiation matrix sum to zero, so the
                // derivative only involves increments over the element start.
                // This keeps rounding proportional to the increments rather
                // than to the size of the state.
                let start = Expr::var(layout.differential_index(e, 0, i));
                let derivative = Expr::sum((1..=scheme.points).map(|j| {
                    (Expr::var(layout.differential_index(e, j, i)) - start.clone()) * dmat[j][k - 1]
                }));
                let rhs = if i < states.len() { &disjunct.rhs[i] } else { &model.objective.integrand };
                equalities.push(derivative - h * at_node(rhs, e, k));
            }
            for g in disjunct.algebraic.iter().chain(&model.global_constraints) {
                equalities.push(at_node(g, e, k));
            }
        }
    }

    let q_end = Expr::var(layout.quadrature_index(layout.n_elements() - 1, scheme.points));
    let objective = match model.objective.sense {
        Sense::Minimize => q_end,
        Sense::Maximize => -q_end,
    };

    Ok(DiscretizedNlp {
        lower,
        upper,
        objective,
        equalities,
        variables,
        layout: Some(layout),
    })
}
