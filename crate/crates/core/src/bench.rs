//! The two mode-switching benchmarks and a driver that runs a method on them
//! and writes a JSON result document and a CSV trace.
//!
//! Both problems have one state `x ∈ [0, 10]` with `x(0) = 1`, one control
//! `u ∈ [-4, 4]`, unit-length stages and the objective `max ∫ x² dt`
//! (reported as `-∫ x² dt`). Modes must appear in increasing order, each
//! used mode contiguous, starting with mode 1.

use std::fmt;
use std::fs::File;
use std::io::{self, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::Expr;
use crate::external::{build_map, ExternalError, LatticePoint, ReformulationScheme};
use crate::model::{DagdpModel, Disjunct, Objective, Proposition, Sense};
use crate::nlp::{SolveStatus, SolverSettings};
use crate::search::{solve_enumerate, solve_ldsda, Neighborhood, SearchError, SearchOutcome, SearchSettings, SearchStatus};
use crate::transcription::CollocationScheme;

pub const RESULT_FORMAT: &str = "ldsda-result/1";
pub const TRACE_COLUMNS: [&str; 8] = ["iteration", "phase", "point", "modes", "feasible", "status", "objective", "elapsed"];

const STATE_BOUNDS: (f64, f64) = (0.0, 10.0);
const CONTROL_BOUNDS: (f64, f64) = (-4.0, 4.0);
const FIRST_CONTROL: f64 = 4.0;
const MAX_STAGES: usize = 12;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid benchmark: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    External(#[from] ExternalError),
    #[error(transparent)]
    Search(#[from] SearchError),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProblemId {
    /// Two modes, three stages, first control fixed to 4.
    ThreeStage,
    /// Three modes, `S` stages.
    MultiStage,
}

impl FromStr for ProblemId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "three-stage" => Ok(Self::ThreeStage),
            "multi-stage" => Ok(Self::MultiStage),
            other => Err(format!("unknown problem `{other}` (expected three-stage or multi-stage)")),
        }
    }
}

impl fmt::Display for ProblemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::ThreeStage => "three-stage",
            Self::MultiStage => "multi-stage",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    LdsdaL2,
    LdsdaLinf,
    Enumerate,
}

impl Method {
    pub fn neighborhood(self) -> Option<Neighborhood> {
        match self {
            Method::LdsdaL2 => Some(Neighborhood::L2),
            Method::LdsdaLinf => Some(Neighborhood::LInf),
            Method::Enumerate => None,
        }
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ldsda-l2" => Ok(Self::LdsdaL2),
            "ldsda-linf" => Ok(Self::LdsdaLinf),
            "enumerate" => Ok(Self::Enumerate),
            other => Err(format!("unknown method `{other}` (expected ldsda-l2, ldsda-linf or enumerate)")),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::LdsdaL2 => "ldsda-l2",
            Self::LdsdaLinf => "ldsda-linf",
            Self::Enumerate => "enumerate",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSpec {
    pub problem: ProblemId,
    pub stages: usize,
    pub scheme: CollocationScheme,
    pub method: Method,
    pub reformulation: ReformulationScheme,
    pub start: LatticePoint,
    /// Seconds.
    pub time_limit: f64,
    pub restarts: usize,
    pub seed: u64,
}

impl BenchmarkSpec {
    /// Defaults: 30 elements and 3 points per stage; the three-stage problem
    /// uses the ordinal lattice from `(1,1,1)` with 900 s, the multi-stage
    /// problem the transition lattice from `(1,2)` with 3600 s.
    pub fn new(problem: ProblemId, stages: usize, method: Method) -> Self {
        let (reformulation, start, time_limit) = match problem {
            ProblemId::ThreeStage => (ReformulationScheme::Ordinal, LatticePoint::new(vec![1, 1, 1]), 900.0),
            ProblemId::MultiStage => (ReformulationScheme::Transition, LatticePoint::new(vec![1, 2]), 3600.0),
        };
        Self {
            problem,
            stages,
            scheme: CollocationScheme::default(),
            method,
            reformulation,
            start,
            time_limit,
            restarts: 0,
            seed: 0,
        }
    }

    pub fn three_stage(method: Method) -> Self {
        Self::new(ProblemId::ThreeStage, 3, method)
    }

    pub fn multi_stage(stages: usize, method: Method) -> Self {
        Self::new(ProblemId::MultiStage, stages, method)
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        match self.problem {
            ProblemId::ThreeStage if self.stages != 3 => {
                return Err(BenchError::InvalidSpec("the three-stage problem has exactly 3 stages".into()));
            }
            ProblemId::MultiStage if !(1..=MAX_STAGES).contains(&self.stages) => {
                return Err(BenchError::InvalidSpec(format!("stages must lie in 1..={MAX_STAGES}")));
            }
            _ => {}
        }
        self.scheme
            .validate()
            .map_err(|e| BenchError::InvalidSpec(e.to_string()))?;
        if !(self.time_limit > 0.0) {
            return Err(BenchError::InvalidSpec("time limit must be positive".into()));
        }
        Ok(())
    }
}

fn sequencing(model: &mut DagdpModel, modes: usize) {
    let stages = model.n_stages();
    for r in 1..modes {
        for s in 0..stages {
            // mode r+1 needs mode r earlier, and excludes mode r later
            model.propositions.push(Proposition::implies(
                Proposition::atom(s, r),
                Proposition::any_stage(0..s, r - 1),
            ));
            model.propositions.push(Proposition::implies(
                Proposition::atom(s, r),
                Proposition::not(Proposition::any_stage(s + 1..stages, r - 1)),
            ));
        }
    }
}

fn base_model(name: &str, stages: usize, fixed_first: Option<f64>) -> (DagdpModel, Expr, Expr) {
    let mut m = DagdpModel::new(name, (0..=stages).map(|s| s as f64).collect());
    let x = m.add_state("x", STATE_BOUNDS.0, STATE_BOUNDS.1, 1.0);
    let u = m.add_control("u", CONTROL_BOUNDS.0, CONTROL_BOUNDS.1, fixed_first);
    m.objective = Objective { sense: Sense::Maximize, integrand: x.clone() * x.clone() };
    (m, x, u)
}

/// `dx/dt = -x e^(x-1) + u`.
pub fn mode_decay(x: &Expr, u: &Expr) -> Expr {
    -(x.clone() * (x.clone() - 1.0).exp()) + u.clone()
}

/// `dx/dt = (0.5 x³ + u) / 20`.
pub fn mode_cubic(x: &Expr, u: &Expr) -> Expr {
    (x.clone().powi(3) * 0.5 + u.clone()) / 20.0
}

/// `dx/dt = (x² + u) / (t + 20)`.
pub fn mode_damped(x: &Expr, u: &Expr, t: &Expr) -> Expr {
    (x.clone().powi(2) + u.clone()) / (t.clone() + 20.0)
}

pub fn three_stage_model() -> DagdpModel {
    let (mut m, x, u) = base_model("three-stage", 3, Some(FIRST_CONTROL));
    for s in 0..3 {
        m.add_disjunct(s, Disjunct::new(vec![mode_decay(&x, &u)]));
        m.add_disjunct(s, Disjunct::new(vec![mode_cubic(&x, &u)]));
    }
    sequencing(&mut m, 2);
    m
}

pub fn multi_stage_model(stages: usize) -> DagdpModel {
    let (mut m, x, u) = base_model(&format!("multi-stage-{stages}"), stages, None);
    let t = m.time();
    for s in 0..stages {
        m.add_disjunct(s, Disjunct::new(vec![mode_decay(&x, &u)]));
        m.add_disjunct(s, Disjunct::new(vec![mode_cubic(&x, &u)]));
        m.add_disjunct(s, Disjunct::new(vec![mode_damped(&x, &u, &t)]));
    }
    sequencing(&mut m, 3);
    m
}

pub fn build_benchmark(spec: &BenchmarkSpec) -> Result<DagdpModel, BenchError> {
    spec.validate()?;
    Ok(match spec.problem {
        ProblemId::ThreeStage => three_stage_model(),
        ProblemId::MultiStage => multi_stage_model(spec.stages),
    })
}

/// Search settings implied by a spec.
pub fn search_settings(spec: &BenchmarkSpec) -> SearchSettings {
    SearchSettings {
        neighborhood: spec.method.neighborhood().unwrap_or(Neighborhood::L2),
        time_limit: Some(spec.time_limit),
        solver: SolverSettings { restarts: spec.restarts, seed: spec.seed, ..SolverSettings::default() },
        ..SearchSettings::default()
    }
}

/// Runs the spec's method on its benchmark.
pub fn execute(spec: &BenchmarkSpec) -> Result<SearchOutcome, BenchError> {
    let model = build_benchmark(spec)?;
    let settings = search_settings(spec);
    Ok(match spec.method {
        Method::Enumerate => solve_enumerate(&model, &spec.scheme, &settings)?,
        Method::LdsdaL2 | Method::LdsdaLinf => {
            let map = build_map(&model, spec.reformulation)?;
            solve_ldsda(&model, &map, &spec.scheme, &spec.start, &settings)?
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub name: String,
    pub stages: usize,
    pub modes_per_stage: Vec<usize>,
    pub propositions: usize,
    pub state_bounds: (f64, f64),
    pub initial_state: f64,
    pub control_bounds: (f64, f64),
    /// Value the control is fixed to on the first finite element, if any.
    pub first_control: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultDocument {
    pub format: String,
    pub spec: BenchmarkSpec,
    pub search: SearchSettings,
    pub model: ModelSummary,
    pub search_status: SearchStatus,
    pub solve_status: SolveStatus,
    pub point: String,
    /// One-based mode per stage.
    pub schedule: Vec<usize>,
    pub objective: f64,
    pub max_violation: f64,
    pub subproblems: usize,
    pub neighbor_rounds: usize,
    pub wall_time: f64,
}

impl ResultDocument {
    pub fn new(spec: &BenchmarkSpec, model: &DagdpModel, outcome: &SearchOutcome) -> Self {
        Self {
            format: RESULT_FORMAT.to_string(),
            spec: spec.clone(),
            search: search_settings(spec),
            model: ModelSummary {
                name: model.name.clone(),
                stages: model.n_stages(),
                modes_per_stage: model.disjunct_counts(),
                propositions: model.propositions.len(),
                state_bounds: STATE_BOUNDS,
                initial_state: 1.0,
                control_bounds: CONTROL_BOUNDS,
                first_control: (spec.problem == ProblemId::ThreeStage).then_some(FIRST_CONTROL),
            },
            search_status: outcome.status,
            solve_status: outcome.result.status,
            point: outcome.point.to_string(),
            schedule: outcome.assignment.one_based(),
            objective: outcome.objective,
            max_violation: outcome.result.max_violation,
            subproblems: outcome.subproblems,
            neighbor_rounds: outcome.neighbor_rounds,
            wall_time: outcome.wall_time,
        }
    }

    /// 0 for a converged search ending at an optimal subproblem, 2 on time
    /// limit, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match (self.search_status, self.solve_status) {
            (SearchStatus::Converged, SolveStatus::Optimal) => 0,
            (SearchStatus::TimeLimit, _) => 2,
            _ => 1,
        }
    }
}

pub fn write_trace<W: Write>(outcome: &SearchOutcome, writer: W) -> Result<(), BenchError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(TRACE_COLUMNS)?;
    for r in &outcome.trace {
        let modes = r
            .modes
            .as_ref()
            .map(|m| m.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(","))
            .unwrap_or_default();
        w.write_record([
            r.iteration.to_string(),
            r.phase.to_string(),
            r.point.to_string(),
            modes,
            r.feasible.to_string(),
            r.status.map(|s| format!("{s:?}")).unwrap_or_default(),
            r.objective.map(|o| format!("{o:?}")).unwrap_or_default(),
            format!("{:.6}", r.elapsed),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Executes `spec`, writes the result document to `out` and, if given, the
/// trace CSV to `trace`. Returns the process exit code.
pub fn run(spec: &BenchmarkSpec, out: &Path, trace: Option<&Path>) -> Result<i32, BenchError> {
    let model = build_benchmark(spec)?;
    let outcome = execute(spec)?;
    let doc = ResultDocument::new(spec, &model, &outcome);
    serde_json::to_writer_pretty(File::create(out)?, &doc)?;
    if let Some(path) = trace {
        write_trace(&outcome, File::create(path)?)?;
    }
    Ok(doc.exit_code())
}
