//! Feasible-set counts and lattice encodings checked against a brute-force
//! reading of the sequencing rules.

use std::collections::HashSet;

use ldsda::bench::{multi_stage_model, three_stage_model};
use ldsda::external::{build_map, Decoded, LatticePoint, ReformulationScheme};
use ldsda::model::BooleanAssignment;
use proptest::prelude::*;

mod common;
use common::{all_schedules, oracle_count, sequencing_holds};

#[test]
fn oracle_counts() {
    assert_eq!(oracle_count(3, 2), 3);
    assert_eq!(all_schedules(3, 2).len(), 8);
    assert_eq!(oracle_count(4, 3), 7);
    assert_eq!(oracle_count(9, 3), 37);
    // at most one transition into each later mode: 1 + (S-1) + C(S-1, 2)
    for s in 1..=8 {
        assert_eq!(oracle_count(s, 3), 1 + (s - 1) + (s - 1) * (s.saturating_sub(2)) / 2);
    }
}

#[test]
fn model_enumeration_matches_oracle() {
    let m = three_stage_model();
    let feasible: Vec<Vec<usize>> = m.enumerate_feasible().unwrap().iter().map(|a| a.one_based()).collect();
    let expected: Vec<Vec<usize>> = all_schedules(3, 2).into_iter().filter(|s| sequencing_holds(s, 2)).collect();
    assert_eq!(feasible, expected);
    assert_eq!(m.assignment_count(), 8);

    for stages in 1..=9 {
        let m = multi_stage_model(stages);
        let feasible: Vec<Vec<usize>> = m.enumerate_feasible().unwrap().iter().map(|a| a.one_based()).collect();
        let expected: Vec<Vec<usize>> =
            all_schedules(stages, 3).into_iter().filter(|s| sequencing_holds(s, 3)).collect();
        assert_eq!(feasible, expected, "S = {stages}");
    }
}

#[test]
fn transition_lattice_of_nine_stages() {
    let map = build_map(&multi_stage_model(9), ReformulationScheme::Transition).unwrap();
    assert_eq!(map.dim(), 2);
    assert_eq!(map.lower, vec![1, 1]);
    assert_eq!(map.upper, vec![9, 9]);
    assert_eq!(map.size(), 81);
    let feasible = map
        .points()
        .iter()
        .filter(|z| matches!(map.decode(z).unwrap(), Decoded::Feasible(_)))
        .count();
    assert_eq!(feasible, 37);

    let modes = |z: [i64; 2]| map.decode(&LatticePoint::new(z.to_vec())).unwrap().assignment().map(|a| a.one_based());
    assert_eq!(modes([1, 4]), Some(vec![1, 2, 2, 2, 3, 3, 3, 3, 3]));
    assert_eq!(modes([1, 2]), Some(vec![1, 2, 3, 3, 3, 3, 3, 3, 3]));
    assert_eq!(modes([9, 9]), Some(vec![1; 9]));
    assert_eq!(modes([3, 9]), Some(vec![1, 1, 1, 2, 2, 2, 2, 2, 2]));
    assert_eq!(modes([4, 4]), None);
    assert_eq!(modes([5, 3]), None);
    assert_eq!(modes([9, 3]), None);
}

/// Decoding is injective on feasible points and every feasible schedule has
/// exactly one preimage.
fn assert_bijective(stages: usize, scheme: ReformulationScheme) {
    let model = multi_stage_model(stages);
    let map = build_map(&model, scheme).unwrap();
    let mut images = HashSet::new();
    for z in map.points() {
        if let Decoded::Feasible(a) = map.decode(&z).unwrap() {
            assert!(sequencing_holds(&a.one_based(), 3), "{z} decodes to {a}");
            assert_eq!(map.encode(&a).as_ref(), Some(&z));
            assert!(images.insert(a.one_based()), "{z} shares its schedule");
        }
    }
    let feasible = model.enumerate_feasible().unwrap();
    assert_eq!(images.len(), feasible.len());
    assert_eq!(images.len(), oracle_count(stages, 3));
    for a in feasible {
        let z = map.encode(&a).expect("every feasible schedule is encodable");
        assert_eq!(map.decode(&z).unwrap(), Decoded::Feasible(a));
    }
}

#[test]
fn decoding_is_bijective_up_to_six_stages() {
    for stages in 1..=6 {
        assert_bijective(stages, ReformulationScheme::Ordinal);
        if stages >= 2 {
            assert_bijective(stages, ReformulationScheme::Transition);
        }
    }
    let map = build_map(&three_stage_model(), ReformulationScheme::Ordinal).unwrap();
    let feasible: Vec<_> = map.points().into_iter().filter(|z| map.decode(z).unwrap().assignment().is_some()).collect();
    assert_eq!(feasible, vec![LatticePoint::new(vec![1, 1, 1]), LatticePoint::new(vec![1, 1, 2]), LatticePoint::new(vec![1, 2, 2])]);
}

proptest! {
    #[test]
    fn ordinal_decode_agrees_with_oracle(stages in 1usize..=8, seed in prop::collection::vec(1i64..=3, 8)) {
        let map = build_map(&multi_stage_model(stages), ReformulationScheme::Ordinal).unwrap();
        let z = LatticePoint::new(seed[..stages].to_vec());
        let schedule: Vec<usize> = z.coords().iter().map(|&c| c as usize).collect();
        match map.decode(&z).unwrap() {
            Decoded::Feasible(a) => {
                prop_assert!(sequencing_holds(&schedule, 3));
                prop_assert_eq!(a, BooleanAssignment::from_one_based(&schedule));
            }
            Decoded::Infeasible => prop_assert!(!sequencing_holds(&schedule, 3)),
        }
    }

    #[test]
    fn transition_decode_agrees_with_oracle(stages in 2usize..=12, a in 1i64..=12, b in 1i64..=12) {
        let map = build_map(&multi_stage_model(stages), ReformulationScheme::Transition).unwrap();
        let s = stages as i64;
        let z = LatticePoint::new(vec![a.min(s), b.min(s)]);
        // stage k (zero-based) runs mode 1 + number of transitions at or before k
        let (ta, tb) = (z.coords()[0], z.coords()[1]);
        let schedule: Vec<usize> = (0..s)
            .map(|k| 1 + usize::from(ta < s && ta <= k) + usize::from(tb < s && tb <= k))
            .collect();
        let valid = (ta < s && tb < s && ta < tb) || (ta < s && tb == s) || (ta == s && tb == s);
        match map.decode(&z).unwrap() {
            Decoded::Feasible(assignment) => {
                prop_assert!(valid);
                prop_assert_eq!(assignment.one_based(), schedule);
            }
            Decoded::Infeasible => prop_assert!(!valid),
        }
    }
}
