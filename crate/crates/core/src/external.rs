//! External-variable reformulations: integer lattices whose points stand for
//! ordered mode selections.
//!
//! The ordinal scheme has one coordinate per stage holding the selected mode.
//! The transition scheme has one coordinate per mode transition `m -> m+1`:
//! value `c < S` places the transition at stage `c + 1`, value `S` means the
//! transition never happens.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{BooleanAssignment, DagdpModel, LogicError, ModelError, Proposition, MAX_ENUMERATION};

#[derive(Debug, Error, PartialEq)]
pub enum ExternalError {
    #[error("the transition scheme needs every stage to offer the same ordered modes, and the propositions must allow exactly the monotone schedules")]
    UnsupportedScheme,
    #[error("coordinate {coordinate} = {value} lies outside [{lower}, {upper}]")]
    OutOfBounds {
        coordinate: usize,
        value: i64,
        lower: i64,
        upper: i64,
    },
    #[error("lattice point has {found} coordinates, expected {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid lattice point `{0}`")]
    Parse(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Logic(#[from] LogicError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReformulationScheme {
    Ordinal,
    Transition,
}

impl FromStr for ReformulationScheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ordinal" => Ok(Self::Ordinal),
            "transition" => Ok(Self::Transition),
            other => Err(format!("unknown reformulation `{other}`")),
        }
    }
}

impl fmt::Display for ReformulationScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Ordinal => "ordinal",
            Self::Transition => "transition",
        })
    }
}

/// A point of the integer lattice, rendered as comma-separated integers.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LatticePoint(pub Vec<i64>);

impl LatticePoint {
    pub fn new(coords: Vec<i64>) -> Self {
        Self(coords)
    }

    pub fn coords(&self) -> &[i64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    /// Componentwise sum with an offset of the same dimension.
    pub fn offset(&self, d: &[i64]) -> Self {
        assert_eq!(d.len(), self.dim());
        Self(self.0.iter().zip(d).map(|(a, b)| a + b).collect())
    }
}

impl fmt::Display for LatticePoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, c) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{c}")?;
        }
        Ok(())
    }
}

impl FromStr for LatticePoint {
    type Err = ExternalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let trimmed = s.trim().trim_start_matches('(').trim_end_matches(')');
        let coords = trimmed
            .split(',')
            .map(|c| c.trim().parse::<i64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|_| ExternalError::Parse(s.to_string()))?;
        Ok(Self(coords))
    }
}

/// Result of mapping a lattice point back to Boolean selections.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Decoded {
    Feasible(BooleanAssignment),
    /// The point maps to no schedule, or to one that violates the logic.
    Infeasible,
}

impl Decoded {
    pub fn assignment(&self) -> Option<&BooleanAssignment> {
        match self {
            Decoded::Feasible(a) => Some(a),
            Decoded::Infeasible => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExternalMap {
    pub scheme: ReformulationScheme,
    pub lower: Vec<i64>,
    pub upper: Vec<i64>,
    n_stages: usize,
    propositions: Vec<Proposition>,
}

impl ExternalMap {
    /// Ordinal lattice `{1..upper[0]} × … ` with no logic restrictions.
    pub fn unconstrained(upper: Vec<i64>) -> Self {
        Self {
            scheme: ReformulationScheme::Ordinal,
            lower: vec![1; upper.len()],
            n_stages: upper.len(),
            upper,
            propositions: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn n_stages(&self) -> usize {
        self.n_stages
    }

    /// Number of lattice points.
    pub fn size(&self) -> u128 {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| (u - l + 1) as u128)
            .product()
    }

    pub fn contains(&self, z: &LatticePoint) -> bool {
        z.dim() == self.dim()
            && z.0.iter().zip(self.lower.iter().zip(&self.upper)).all(|(v, (l, u))| l <= v && v <= u)
    }

    fn check(&self, z: &LatticePoint) -> Result<(), ExternalError> {
        if z.dim() != self.dim() {
            return Err(ExternalError::DimensionMismatch { expected: self.dim(), found: z.dim() });
        }
        for (coordinate, (&value, (&lower, &upper))) in z.0.iter().zip(self.lower.iter().zip(&self.upper)).enumerate() {
            if value < lower || value > upper {
                return Err(ExternalError::OutOfBounds { coordinate, value, lower, upper });
            }
        }
        Ok(())
    }

    /// Schedule encoded by `z`, before any logic check.
    fn schedule(&self, z: &LatticePoint) -> Option<Vec<usize>> {
        match self.scheme {
            ReformulationScheme::Ordinal => Some(z.0.iter().map(|&c| (c - 1) as usize).collect()),
            ReformulationScheme::Transition => {
                let never = self.n_stages as i64;
                let mut previous = 0;
                let mut seen_never = false;
                for &c in &z.0 {
                    if c == never {
                        seen_never = true;
                    } else if seen_never || c <= previous {
                        return None;
                    } else {
                        previous = c;
                    }
                }
                // stage s (0-based) has passed every transition with c <= s
                Some(
                    (0..self.n_stages)
                        .map(|s| z.0.iter().filter(|&&c| c < never && c as usize <= s).count())
                        .collect(),
                )
            }
        }
    }

    /// Maps a lattice point to its Boolean assignment, checking the model's
    /// propositions.
    pub fn decode(&self, z: &LatticePoint) -> Result<Decoded, ExternalError> {
        self.check(z)?;
        let Some(modes) = self.schedule(z) else {
            return Ok(Decoded::Infeasible);
        };
        let a = BooleanAssignment::new(modes);
        for p in &self.propositions {
            if !p.evaluate(&a)? {
                return Ok(Decoded::Infeasible);
            }
        }
        Ok(Decoded::Feasible(a))
    }

    /// The lattice point for an assignment, if the scheme can express it.
    pub fn encode(&self, a: &BooleanAssignment) -> Option<LatticePoint> {
        if a.n_stages() != self.n_stages {
            return None;
        }
        let z = match self.scheme {
            ReformulationScheme::Ordinal => LatticePoint(a.modes().iter().map(|&m| m as i64 + 1).collect()),
            ReformulationScheme::Transition => LatticePoint(
                (1..=self.dim())
                    .map(|j| {
                        a.modes()
                            .iter()
                            .position(|&m| m >= j)
                            .map_or(self.n_stages as i64, |s| s as i64)
                    })
                    .collect(),
            ),
        };
        if !self.contains(&z) {
            return None;
        }
        (self.schedule(&z).as_deref() == Some(a.modes())).then_some(z)
    }

    /// Every lattice point in lexicographic order.
    pub fn points(&self) -> Vec<LatticePoint> {
        let mut out = Vec::new();
        let mut z = self.lower.clone();
        if z.is_empty() {
            return out;
        }
        loop {
            out.push(LatticePoint(z.clone()));
            let mut i = z.len();
            loop {
                if i == 0 {
                    return out;
                }
                i -= 1;
                if z[i] < self.upper[i] {
                    z[i] += 1;
                    break;
                }
                z[i] = self.lower[i];
            }
        }
    }
}

/// Builds the lattice for `model` under `scheme`.
///
/// The transition scheme requires every stage to offer the same `m >= 2`
/// modes and the model's feasible schedules to be exactly the monotone
/// schedules `1…1 2…2 … m…m` that start in mode 1 and skip no mode; this
/// is verified by enumeration.
pub fn build_map(model: &DagdpModel, scheme: ReformulationScheme) -> Result<ExternalMap, ExternalError> {
    model.validate()?;
    let counts = model.disjunct_counts();
    let n_stages = counts.len();
    let propositions = model.propositions.clone();
    match scheme {
        ReformulationScheme::Ordinal => Ok(ExternalMap {
            scheme,
            lower: vec![1; n_stages],
            upper: counts.iter().map(|&c| c as i64).collect(),
            n_stages,
            propositions,
        }),
        ReformulationScheme::Transition => {
            let m = counts[0];
            if m < 2 || counts.iter().any(|&c| c != m) {
                return Err(ExternalError::UnsupportedScheme);
            }
            let map = ExternalMap {
                scheme,
                lower: vec![1; m - 1],
                upper: vec![n_stages as i64; m - 1],
                n_stages,
                propositions,
            };
            if map.size() > MAX_ENUMERATION as u128 {
                return Err(ModelError::LatticeTooLarge { count: map.size() }.into());
            }
            let feasible: BTreeSet<Vec<usize>> = model
                .enumerate_feasible()?
                .into_iter()
                .map(|a| a.modes().to_vec())
                .collect();
            let representable: BTreeSet<Vec<usize>> =
                map.points().iter().filter_map(|z| map.schedule(z)).collect();
            if feasible != representable {
                return Err(ExternalError::UnsupportedScheme);
            }
            Ok(map)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Disjunct;

    fn staged(stages: usize, modes: usize, monotone: bool) -> DagdpModel {
        let mut m = DagdpModel::new("staged", (0..=stages).map(|s| s as f64).collect());
        let x = m.add_state("x", 0.0, 1.0, 0.0);
        for s in 0..stages {
            for r in 0..modes {
                m.add_disjunct(s, Disjunct::new(vec![x.clone() * r as f64]));
            }
        }
        if monotone {
            for s in 0..stages {
                for r in 0..modes {
                    // mode r+1 at s needs mode r somewhere before and mode r never after
                    if r + 1 < modes {
                        m.propositions.push(Proposition::implies(
                            Proposition::atom(s, r + 1),
                            Proposition::Or((0..s).map(|p| Proposition::atom(p, r)).collect()),
                        ));
                    }
                    m.propositions.push(Proposition::implies(
                        Proposition::atom(s, r),
                        Proposition::Not(Box::new(Proposition::Or(
                            (s + 1..stages).flat_map(|p| (0..r).map(move |q| Proposition::atom(p, q))).collect(),
                        ))),
                    ));
                }
            }
        }
        m
    }

    #[test]
    fn lattice_points_render_and_parse() {
        let z: LatticePoint = "1,2,3".parse().unwrap();
        assert_eq!(z.coords(), &[1, 2, 3]);
        assert_eq!(z.to_string(), "1,2,3");
        assert_eq!("(4, 5)".parse::<LatticePoint>().unwrap(), LatticePoint::new(vec![4, 5]));
        assert!("1,x".parse::<LatticePoint>().is_err());
    }

    #[test]
    fn ordinal_map_has_one_coordinate_per_stage() {
        let m = staged(3, 2, false);
        let map = build_map(&m, ReformulationScheme::Ordinal).unwrap();
        assert_eq!(map.dim(), 3);
        assert_eq!(map.upper, vec![2, 2, 2]);
        assert_eq!(map.points().len(), 8);
        let z = LatticePoint::new(vec![1, 2, 2]);
        let a = map.decode(&z).unwrap();
        assert_eq!(a, Decoded::Feasible(BooleanAssignment::from_one_based(&[1, 2, 2])));
        assert_eq!(map.encode(a.assignment().unwrap()), Some(z));
        assert!(matches!(
            map.decode(&LatticePoint::new(vec![1, 3, 1])),
            Err(ExternalError::OutOfBounds { coordinate: 1, value: 3, .. })
        ));
    }

    #[test]
    fn transition_decoding() {
        let m = staged(4, 3, true);
        let map = build_map(&m, ReformulationScheme::Transition).unwrap();
        assert_eq!((map.dim(), map.lower.clone(), map.upper.clone()), (2, vec![1, 1], vec![4, 4]));
        let decode = |c: [i64; 2]| map.decode(&LatticePoint::new(c.to_vec())).unwrap();
        assert_eq!(decode([1, 2]), Decoded::Feasible(BooleanAssignment::from_one_based(&[1, 2, 3, 3])));
        assert_eq!(decode([2, 2]), Decoded::Infeasible);
        assert_eq!(decode([4, 2]), Decoded::Infeasible);
        assert_eq!(decode([4, 4]), Decoded::Feasible(BooleanAssignment::from_one_based(&[1, 1, 1, 1])));
        assert_eq!(decode([3, 4]), Decoded::Feasible(BooleanAssignment::from_one_based(&[1, 1, 1, 2])));
    }

    #[test]
    fn transition_scheme_needs_ordered_logic() {
        let m = staged(3, 2, false);
        assert_eq!(build_map(&m, ReformulationScheme::Transition), Err(ExternalError::UnsupportedScheme));
    }
}
