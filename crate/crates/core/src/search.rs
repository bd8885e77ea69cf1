//! Discrete steepest descent over an external-variable lattice, and the
//! exhaustive enumeration baseline.
//!
//! Every lattice point is decoded first; points that decode infeasibly are
//! marked visited without building an NLP. Neighbor evaluations run on the
//! rayon pool, but the incumbent is chosen afterwards in direction order, so
//! traces do not depend on scheduling.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::external::{Decoded, ExternalError, ExternalMap, LatticePoint};
use crate::model::{BooleanAssignment, DagdpModel, ModelError};
use crate::nlp::{initial_guess, solve, SolveResult, SolveStatus, SolverSettings};
use crate::transcription::{transcribe, CollocationScheme};

#[derive(Debug, Error, PartialEq)]
pub enum SearchError {
    #[error("start point {0} does not decode to a feasible configuration")]
    InfeasibleStart(LatticePoint),
    #[error("the model has no feasible configuration")]
    NoFeasibleConfiguration,
    #[error("improvement tolerance must be positive")]
    InvalidTolerance,
    #[error(transparent)]
    External(#[from] ExternalError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Neighborhood {
    L2,
    LInf,
}

impl FromStr for Neighborhood {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "l2" => Ok(Self::L2),
            "linf" | "l-inf" | "l_inf" => Ok(Self::LInf),
            other => Err(format!("unknown neighborhood `{other}`")),
        }
    }
}

impl fmt::Display for Neighborhood {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::L2 => "l2",
            Self::LInf => "linf",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSettings {
    pub neighborhood: Neighborhood,
    /// A move must lower the objective by more than this.
    pub epsilon: f64,
    /// Wall-clock limit in seconds.
    pub time_limit: Option<f64>,
    pub solver: SolverSettings,
}

impl Default for SearchSettings {
    fn default() -> Self {
        Self {
            neighborhood: Neighborhood::L2,
            epsilon: 1e-6,
            time_limit: None,
            solver: SolverSettings::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Initial,
    Neighbor,
    Line,
    Enumerate,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Initial => "initial",
            Phase::Neighbor => "neighbor",
            Phase::Line => "line",
            Phase::Enumerate => "enumerate",
        })
    }
}

/// One visited lattice point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    /// Neighbor-search round the record belongs to (0 for the start point).
    pub iteration: usize,
    pub phase: Phase,
    pub point: LatticePoint,
    /// One-based modes, when the point decodes feasibly.
    pub modes: Option<Vec<usize>>,
    pub feasible: bool,
    pub status: Option<SolveStatus>,
    pub objective: Option<f64>,
    /// Seconds since the search started.
    pub elapsed: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchStatus {
    /// No neighbor improves the incumbent (or enumeration finished).
    Converged,
    TimeLimit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchOutcome {
    pub status: SearchStatus,
    pub point: LatticePoint,
    pub assignment: BooleanAssignment,
    /// `+inf` if no evaluated configuration was solved to optimality.
    pub objective: f64,
    pub result: SolveResult,
    pub trace: Vec<TraceRecord>,
    pub subproblems: usize,
    pub neighbor_rounds: usize,
    pub wall_time: f64,
}

/// Solves the subproblem of one configuration.
pub trait Evaluator: Sync {
    fn evaluate(&self, point: &LatticePoint, assignment: &BooleanAssignment) -> SolveResult;
}

impl<F> Evaluator for F
where
    F: Fn(&LatticePoint, &BooleanAssignment) -> SolveResult + Sync,
{
    fn evaluate(&self, point: &LatticePoint, assignment: &BooleanAssignment) -> SolveResult {
        self(point, assignment)
    }
}

/// Transcribes, initializes and solves the collocation NLP.
pub struct SubproblemEvaluator<'a> {
    pub model: &'a DagdpModel,
    pub scheme: CollocationScheme,
    pub solver: SolverSettings,
}

impl Evaluator for SubproblemEvaluator<'_> {
    fn evaluate(&self, _point: &LatticePoint, assignment: &BooleanAssignment) -> SolveResult {
        let start = Instant::now();
        let attempt = || -> Result<SolveResult, String> {
            let nlp = transcribe(self.model, assignment, &self.scheme).map_err(|e| e.to_string())?;
            let x0 = initial_guess(self.model, assignment, &self.scheme).map_err(|e| e.to_string())?;
            solve(&nlp, &x0, &self.solver).map_err(|e| e.to_string())
        };
        attempt().unwrap_or_else(|message| {
            log::warn!("subproblem {assignment} failed: {message}");
            failed_result(start.elapsed().as_secs_f64())
        })
    }
}

fn failed_result(wall_time: f64) -> SolveResult {
    SolveResult {
        status: SolveStatus::NumericFailure,
        objective: f64::NAN,
        x: Vec::new(),
        max_violation: f64::NAN,
        projected_gradient: f64::NAN,
        outer_iterations: 0,
        inner_iterations: 0,
        wall_time,
        penalty: f64::NAN,
    }
}

/// Value used for comparisons: the objective of optimal solves, `+inf`
/// otherwise.
pub fn score(result: &SolveResult) -> f64 {
    if result.status.is_optimal() && result.objective.is_finite() {
        result.objective
    } else {
        f64::INFINITY
    }
}

/// Step offsets of a neighborhood in their fixed order: `+e0, -e0, +e1, …`
/// for L2, and `{-1, 0, 1}^dimension` without zero in lexicographic order for
/// L-infinity.
pub fn directions(dimension: usize, neighborhood: Neighborhood) -> Vec<Vec<i64>> {
    match neighborhood {
        Neighborhood::L2 => (0..dimension)
            .flat_map(|i| {
                [1, -1].into_iter().map(move |sign| {
                    let mut d = vec![0; dimension];
                    d[i] = sign;
                    d
                })
            })
            .collect(),
        Neighborhood::LInf => {
            let total = 3usize.pow(dimension as u32);
            (0..total)
                .map(|mut code| {
                    let mut d = vec![0; dimension];
                    for slot in d.iter_mut().rev() {
                        *slot = (code % 3) as i64 - 1;
                        code /= 3;
                    }
                    d
                })
                .filter(|d| d.iter().any(|&v| v != 0))
                .collect()
        }
    }
}

/// Unvisited in-bounds points one step away from `z`, with their directions.
pub fn neighbors_with_directions(
    z: &LatticePoint,
    map: &ExternalMap,
    neighborhood: Neighborhood,
    visited: &HashSet<LatticePoint>,
) -> Vec<(LatticePoint, Vec<i64>)> {
    directions(z.dim(), neighborhood)
        .into_iter()
        .map(|d| (z.offset(&d), d))
        .filter(|(n, _)| map.contains(n) && !visited.contains(n))
        .collect()
}

pub fn neighbors(
    z: &LatticePoint,
    map: &ExternalMap,
    neighborhood: Neighborhood,
    visited: &HashSet<LatticePoint>,
) -> Vec<LatticePoint> {
    neighbors_with_directions(z, map, neighborhood, visited)
        .into_iter()
        .map(|(n, _)| n)
        .collect()
}

struct Search<'a, E: Evaluator> {
    map: &'a ExternalMap,
    evaluator: &'a E,
    start: Instant,
    deadline: Option<Instant>,
    visited: HashSet<LatticePoint>,
    cache: HashMap<LatticePoint, SolveResult>,
    trace: Vec<TraceRecord>,
}

impl<'a, E: Evaluator> Search<'a, E> {
    fn timed_out(&self) -> bool {
        self.deadline.is_some_and(|d| Instant::now() >= d)
    }

    fn record(&mut self, iteration: usize, phase: Phase, point: &LatticePoint, assignment: Option<&BooleanAssignment>, result: Option<&SolveResult>) {
        self.trace.push(TraceRecord {
            iteration,
            phase,
            point: point.clone(),
            modes: assignment.map(|a| a.one_based()),
            feasible: assignment.is_some(),
            status: result.map(|r| r.status),
            objective: result.map(|r| r.objective),
            elapsed: self.start.elapsed().as_secs_f64(),
        });
    }

    /// Decodes and solves a batch of unvisited points in parallel, recording
    /// them in order. Returns the scores.
    fn evaluate(&mut self, iteration: usize, phase: Phase, points: &[LatticePoint]) -> Result<Vec<f64>, SearchError> {
        let decoded: Vec<Decoded> = points.iter().map(|z| self.map.decode(z)).collect::<Result<_, _>>()?;
        let evaluator = self.evaluator;
        let results: Vec<Option<SolveResult>> = points
            .par_iter()
            .zip(&decoded)
            .map(|(z, d)| d.assignment().map(|a| evaluator.evaluate(z, a)))
            .collect();
        let mut scores = Vec::with_capacity(points.len());
        for ((z, d), result) in points.iter().zip(&decoded).zip(results) {
            debug_assert!(!self.visited.contains(z), "{z} evaluated twice");
            self.visited.insert(z.clone());
            self.record(iteration, phase, z, d.assignment(), result.as_ref());
            scores.push(result.as_ref().map_or(f64::INFINITY, score));
            if let Some(r) = result {
                self.cache.insert(z.clone(), r);
            }
        }
        Ok(scores)
    }
}

/// Runs the descent from `z0` with an arbitrary subproblem evaluator.
pub fn search_lattice<E: Evaluator>(
    map: &ExternalMap,
    evaluator: &E,
    z0: &LatticePoint,
    settings: &SearchSettings,
) -> Result<SearchOutcome, SearchError> {
    if !(settings.epsilon > 0.0) {
        return Err(SearchError::InvalidTolerance);
    }
    let Decoded::Feasible(_) = map.decode(z0)? else {
        return Err(SearchError::InfeasibleStart(z0.clone()));
    };
    let start = Instant::now();
    let mut search = Search {
        map,
        evaluator,
        start,
        deadline: settings.time_limit.map(|s| start + Duration::from_secs_f64(s.max(0.0))),
        visited: HashSet::new(),
        cache: HashMap::new(),
        trace: Vec::new(),
    };
    let mut incumbent = z0.clone();
    let mut best = search.evaluate(0, Phase::Initial, std::slice::from_ref(z0))?[0];
    let mut status = SearchStatus::Converged;
    let mut rounds = 0;

    'outer: loop {
        if search.timed_out() {
            status = SearchStatus::TimeLimit;
            break;
        }
        rounds += 1;
        let candidates = neighbors_with_directions(&incumbent, map, settings.neighborhood, &search.visited);
        let points: Vec<LatticePoint> = candidates.iter().map(|(n, _)| n.clone()).collect();
        let scores = search.evaluate(rounds, Phase::Neighbor, &points)?;
        // first minimum in direction order
        let mut chosen: Option<usize> = None;
        for (i, &s) in scores.iter().enumerate() {
            if chosen.is_none_or(|c| s < scores[c]) {
                chosen = Some(i);
            }
        }
        let Some(i) = chosen.filter(|&i| scores[i] < best - settings.epsilon) else {
            break;
        };
        incumbent = points[i].clone();
        best = scores[i];
        let direction = &candidates[i].1;
        log::info!("round {rounds}: moved to {incumbent} ({best})");

        loop {
            if search.timed_out() {
                status = SearchStatus::TimeLimit;
                break 'outer;
            }
            let next = incumbent.offset(direction);
            if !map.contains(&next) || search.visited.contains(&next) {
                break;
            }
            let s = search.evaluate(rounds, Phase::Line, std::slice::from_ref(&next))?[0];
            if s < best - settings.epsilon {
                incumbent = next;
                best = s;
                log::info!("round {rounds}: line step to {incumbent} ({best})");
            } else {
                break;
            }
        }
    }

    let result = search.cache.get(&incumbent).cloned().expect("the incumbent was evaluated");
    let assignment = map.decode(&incumbent)?.assignment().cloned().expect("the incumbent decodes feasibly");
    Ok(SearchOutcome {
        status,
        point: incumbent,
        assignment,
        objective: best,
        result,
        subproblems: search.cache.len(),
        trace: search.trace,
        neighbor_rounds: rounds,
        wall_time: start.elapsed().as_secs_f64(),
    })
}

/// Descent on the collocation subproblems of `model`.
pub fn solve_ldsda(
    model: &DagdpModel,
    map: &ExternalMap,
    scheme: &CollocationScheme,
    z0: &LatticePoint,
    settings: &SearchSettings,
) -> Result<SearchOutcome, SearchError> {
    let evaluator = SubproblemEvaluator { model, scheme: *scheme, solver: settings.solver.clone() };
    search_lattice(map, &evaluator, z0, settings)
}

/// Evaluates every feasible configuration with an arbitrary evaluator. Points
/// in the trace are one-based mode vectors.
pub fn enumerate_with<E: Evaluator>(
    model: &DagdpModel,
    evaluator: &E,
    settings: &SearchSettings,
) -> Result<SearchOutcome, SearchError> {
    let start = Instant::now();
    let deadline = settings.time_limit.map(|s| start + Duration::from_secs_f64(s.max(0.0)));
    let feasible = model.enumerate_feasible()?;
    let points: Vec<LatticePoint> = feasible
        .iter()
        .map(|a| LatticePoint::new(a.one_based().into_iter().map(|m| m as i64).collect()))
        .collect();
    let batch = rayon::current_num_threads().max(1);
    let mut results: Vec<SolveResult> = Vec::with_capacity(feasible.len());
    let mut trace = Vec::with_capacity(feasible.len());
    let mut status = SearchStatus::Converged;
    for (chunk_points, chunk) in points.chunks(batch).zip(feasible.chunks(batch)) {
        if deadline.is_some_and(|d| Instant::now() >= d) {
            status = SearchStatus::TimeLimit;
            break;
        }
        let solved: Vec<SolveResult> = chunk_points
            .par_iter()
            .zip(chunk)
            .map(|(z, a)| evaluator.evaluate(z, a))
            .collect();
        for ((z, a), r) in chunk_points.iter().zip(chunk).zip(solved) {
            trace.push(TraceRecord {
                iteration: 0,
                phase: Phase::Enumerate,
                point: z.clone(),
                modes: Some(a.one_based()),
                feasible: true,
                status: Some(r.status),
                objective: Some(r.objective),
                elapsed: start.elapsed().as_secs_f64(),
            });
            results.push(r);
        }
    }
    let mut best_index = 0;
    for (i, r) in results.iter().enumerate() {
        if score(r) < score(&results[best_index]) {
            best_index = i;
        }
    }
    let Some(result) = results.get(best_index).cloned() else {
        return Err(SearchError::NoFeasibleConfiguration);
    };
    Ok(SearchOutcome {
        status,
        point: points[best_index].clone(),
        assignment: feasible[best_index].clone(),
        objective: score(&result),
        result,
        subproblems: results.len(),
        trace,
        neighbor_rounds: 0,
        wall_time: start.elapsed().as_secs_f64(),
    })
}

/// Solves the collocation subproblem of every feasible configuration.
pub fn solve_enumerate(
    model: &DagdpModel,
    scheme: &CollocationScheme,
    settings: &SearchSettings,
) -> Result<SearchOutcome, SearchError> {
    let evaluator = SubproblemEvaluator { model, scheme: *scheme, solver: settings.solver.clone() };
    enumerate_with(model, &evaluator, settings)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn direction_sets() {
        assert_eq!(directions(2, Neighborhood::L2), vec![vec![1, 0], vec![-1, 0], vec![0, 1], vec![0, -1]]);
        let linf = directions(2, Neighborhood::LInf);
        assert_eq!(linf.len(), 8);
        assert_eq!(linf[0], vec![-1, -1]);
        assert_eq!(linf[7], vec![1, 1]);
        assert_eq!(directions(3, Neighborhood::LInf).len(), 26);
    }

    #[test]
    fn neighbor_filtering() {
        let map = ExternalMap::unconstrained(vec![3, 3]);
        let none = HashSet::new();
        let p = |c: [i64; 2]| LatticePoint::new(c.to_vec());
        assert_eq!(neighbors(&p([1, 1]), &map, Neighborhood::L2, &none), vec![p([2, 1]), p([1, 2])]);
        let visited: HashSet<_> = [p([1, 2])].into_iter().collect();
        assert_eq!(
            neighbors(&p([2, 2]), &map, Neighborhood::L2, &visited),
            vec![p([3, 2]), p([2, 3]), p([2, 1])]
        );
        assert_eq!(neighbors(&p([2, 2]), &map, Neighborhood::LInf, &none).len(), 8);
    }

    #[test]
    fn neighborhood_names() {
        assert_eq!("L2".parse::<Neighborhood>(), Ok(Neighborhood::L2));
        assert_eq!("linf".parse::<Neighborhood>(), Ok(Neighborhood::LInf));
        assert!("l1".parse::<Neighborhood>().is_err());
    }
}
