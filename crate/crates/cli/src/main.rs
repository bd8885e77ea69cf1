//! Command-line driver for the benchmark problems.
//!
//! Writes a JSON result document and, optionally, a CSV search trace. The
//! exit code is 0 when the method terminates at a local optimum and nonzero
//! on time limit (2), another failure (1) or invalid input (3).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use ldsda::bench::{run, BenchmarkSpec, Method, ProblemId};
use ldsda::external::{LatticePoint, ReformulationScheme};
use ldsda::transcription::CollocationScheme;

#[derive(Debug, Parser)]
#[command(name = "ldsda", version, about = "Logic-based discrete steepest descent on dynamic GDP benchmarks")]
struct Args {
    /// Benchmark problem: three-stage or multi-stage.
    #[arg(long)]
    problem: ProblemId,
    /// Number of stages (multi-stage only; defaults to 9).
    #[arg(long)]
    stages: Option<usize>,
    /// Solution method: ldsda-l2, ldsda-linf or enumerate.
    #[arg(long, default_value = "ldsda-l2")]
    method: Method,
    /// External-variable scheme: ordinal or transition.
    #[arg(long)]
    reformulation: Option<ReformulationScheme>,
    /// Start point as comma-separated integers, e.g. "1,2".
    #[arg(long)]
    start: Option<LatticePoint>,
    /// Finite elements per stage.
    #[arg(long, default_value_t = 30)]
    nfe: usize,
    /// Radau collocation points per element.
    #[arg(long, default_value_t = 3)]
    ncp: usize,
    /// Time limit in seconds.
    #[arg(long)]
    time_limit: Option<f64>,
    /// Extra solves of each subproblem from randomly perturbed starts; the best is kept.
    #[arg(long, default_value_t = 0)]
    restarts: usize,
    /// Seed for the restart perturbations.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Result document path.
    #[arg(long, default_value = "result.json")]
    out: PathBuf,
    /// Search trace path (CSV).
    #[arg(long)]
    trace: Option<PathBuf>,
}

impl Args {
    fn spec(&self) -> BenchmarkSpec {
        let stages = match self.problem {
            ProblemId::ThreeStage => self.stages.unwrap_or(3),
            ProblemId::MultiStage => self.stages.unwrap_or(9),
        };
        let mut spec = BenchmarkSpec::new(self.problem, stages, self.method);
        spec.scheme = CollocationScheme::new(self.nfe, self.ncp);
        if let Some(r) = self.reformulation {
            spec.reformulation = r;
        }
        if let Some(start) = &self.start {
            spec.start = start.clone();
        } else if spec.reformulation == ReformulationScheme::Ordinal && spec.problem == ProblemId::MultiStage {
            spec.start = LatticePoint::new(vec![1; stages]);
        }
        if let Some(t) = self.time_limit {
            spec.time_limit = t;
        }
        spec.restarts = self.restarts;
        spec.seed = self.seed;
        spec
    }
}

fn main() -> ExitCode {
    let args = Args::parse();
    let spec = args.spec();
    match run(&spec, &args.out, args.trace.as_deref()) {
        Ok(code) => ExitCode::from(u8::try_from(code).unwrap_or(1)),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(3)
        }
    }
}
