//! Search mechanics with stub evaluators in place of the collocation solves.

use std::collections::HashSet;

use ldsda::bench::multi_stage_model;
use ldsda::external::{build_map, ExternalMap, LatticePoint, ReformulationScheme};
use ldsda::nlp::SolveStatus;
use ldsda::search::{enumerate_with, search_lattice, Neighborhood, SearchOutcome, SearchSettings};
use proptest::prelude::*;

mod common;
use common::Table;

fn settings(neighborhood: Neighborhood) -> SearchSettings {
    SearchSettings { neighborhood, ..SearchSettings::default() }
}

fn check_mechanics(map: &ExternalMap, table: &Table, outcome: &SearchOutcome) {
    let points: Vec<&LatticePoint> = outcome.trace.iter().map(|r| &r.point).collect();
    let unique: HashSet<&LatticePoint> = points.iter().copied().collect();
    assert_eq!(unique.len(), points.len(), "a point was visited twice");
    let calls = table.calls.lock().unwrap();
    assert!(calls.values().all(|&c| c == 1), "a point was solved twice");
    assert_eq!(calls.len(), outcome.subproblems);
    assert!(outcome.subproblems as u128 <= map.size());

    let best = outcome
        .trace
        .iter()
        .filter(|r| r.status == Some(SolveStatus::Optimal))
        .filter_map(|r| r.objective)
        .fold(f64::INFINITY, f64::min);
    assert_eq!(outcome.objective, best);
    let incumbent = outcome.trace.iter().find(|r| r.point == outcome.point).unwrap();
    assert_eq!(incumbent.objective, Some(best));
}

fn lattice() -> impl Strategy<Value = ExternalMap> {
    prop::collection::vec(2i64..=6, 1..=4).prop_map(ExternalMap::unconstrained)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn mechanics_hold_on_arbitrary_objectives(
        map in lattice(),
        seed in any::<u64>(),
        linf in any::<bool>(),
    ) {
        // pseudo-random objective with roughly one failed solve in seven
        let f = |z: &[i64]| {
            let mut h = seed ^ 0x9e37_79b9_7f4a_7c15;
            for &c in z {
                h = (h ^ c as u64).wrapping_mul(0x0100_0000_01b3).rotate_left(17);
            }
            (h % 7 != 0).then(|| (h % 1000) as f64 / 10.0)
        };
        let table = Table::from_fn(&map, f);
        let start = LatticePoint::new(map.lower.clone());
        let neighborhood = if linf { Neighborhood::LInf } else { Neighborhood::L2 };
        let outcome = search_lattice(&map, &table, &start, &settings(neighborhood)).unwrap();
        check_mechanics(&map, &table, &outcome);
    }

    #[test]
    fn separable_convex_objectives_reach_the_global_minimum(
        map in lattice(),
        centers in prop::collection::vec(0i64..8, 4),
        weights in prop::collection::vec(1u32..5, 4),
        start_seed in prop::collection::vec(0i64..8, 4),
    ) {
        let d = map.dim();
        let f = |z: &[i64]| -> f64 {
            (0..d).map(|i| f64::from(weights[i]) * ((z[i] - centers[i]) as f64).powi(2)).sum()
        };
        let global = map.points().iter().map(|z| f(z.coords())).fold(f64::INFINITY, f64::min);
        let start = LatticePoint::new((0..d).map(|i| 1 + start_seed[i] % map.upper[i]).collect());
        for neighborhood in [Neighborhood::L2, Neighborhood::LInf] {
            let table = Table::from_fn(&map, |z| Some(f(z)));
            let outcome = search_lattice(&map, &table, &start, &settings(neighborhood)).unwrap();
            check_mechanics(&map, &table, &outcome);
            prop_assert_eq!(outcome.objective, global);
        }
    }
}

#[test]
fn transition_lattice_skips_infeasible_points() {
    let model = multi_stage_model(9);
    let map = build_map(&model, ReformulationScheme::Transition).unwrap();
    // minimum at the transition pair (3, 6)
    let table = Table::from_fn(&map, |z| Some(((z[0] - 3).pow(2) + (z[1] - 6).pow(2)) as f64));
    let outcome = search_lattice(&map, &table, &LatticePoint::new(vec![1, 2]), &settings(Neighborhood::LInf)).unwrap();
    check_mechanics(&map, &table, &outcome);
    assert_eq!(outcome.point, LatticePoint::new(vec![3, 6]));
    for record in &outcome.trace {
        let decodable = map.decode(&record.point).unwrap().assignment().is_some();
        assert_eq!(record.feasible, decodable);
        assert_eq!(record.status.is_some(), decodable);
    }
    assert!(outcome.trace.iter().any(|r| !r.feasible));
}

fn run_in_pool(threads: usize, neighborhood: Neighborhood) -> (Vec<LatticePoint>, Vec<Option<f64>>) {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
    pool.install(|| {
        let map = ExternalMap::unconstrained(vec![5, 5, 5]);
        let table = Table::from_fn(&map, |z| {
            Some(((z[0] - 4).pow(2) + (z[1] - 2).pow(2) + (z[2] - 5).pow(2) + z[0] * z[1]) as f64)
        });
        let outcome = search_lattice(&map, &table, &LatticePoint::new(vec![1, 1, 1]), &settings(neighborhood)).unwrap();
        (outcome.trace.iter().map(|r| r.point.clone()).collect(), outcome.trace.iter().map(|r| r.objective).collect())
    })
}

#[test]
fn traces_are_identical_across_thread_counts() {
    for neighborhood in [Neighborhood::L2, Neighborhood::LInf] {
        let reference = run_in_pool(1, neighborhood);
        for threads in [1, 2, 4, 8] {
            assert_eq!(run_in_pool(threads, neighborhood), reference, "{threads} threads");
        }
    }
}

#[test]
fn enumeration_visits_each_feasible_configuration_once() {
    let model = multi_stage_model(5);
    let map = build_map(&model, ReformulationScheme::Ordinal).unwrap();
    let table = Table::from_fn(&map, |z| Some(z.iter().map(|&c| c as f64 * 1.5).sum::<f64>()));
    let outcome = enumerate_with(&model, &table, &SearchSettings::default()).unwrap();
    let feasible = model.enumerate_feasible().unwrap().len();
    assert_eq!(outcome.subproblems, feasible);
    assert_eq!(table.calls.lock().unwrap().len(), feasible);
    check_mechanics(&map, &table, &outcome);
    assert_eq!(outcome.assignment.one_based(), vec![1; 5]);
}
