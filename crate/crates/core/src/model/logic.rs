//! Propositional logic over the Boolean mode-selection variables.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LogicError {
    #[error("atom Y[{stage},{disjunct}] is out of range")]
    InvalidAtom { stage: usize, disjunct: usize },
    #[error("assignment has {found} stages, model has {expected}")]
    StageCountMismatch { expected: usize, found: usize },
    #[error("stage {stage} selects disjunct {disjunct} of {available}")]
    InvalidSelection {
        stage: usize,
        disjunct: usize,
        available: usize,
    },
}

/// A formula over atoms `Y[stage, disjunct]` (both zero-based).
///
/// An empty `Or` is false, an empty `And` is true and an empty `ExactlyOne`
/// is false.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Proposition {
    Atom { stage: usize, disjunct: usize },
    Not(Box<Proposition>),
    And(Vec<Proposition>),
    Or(Vec<Proposition>),
    ExactlyOne(Vec<Proposition>),
    Implies(Box<Proposition>, Box<Proposition>),
    Iff(Box<Proposition>, Box<Proposition>),
}

impl Proposition {
    pub fn atom(stage: usize, disjunct: usize) -> Self {
        Proposition::Atom { stage, disjunct }
    }

    pub fn not(p: Proposition) -> Self {
        Proposition::Not(Box::new(p))
    }

    pub fn implies(antecedent: Proposition, consequent: Proposition) -> Self {
        Proposition::Implies(Box::new(antecedent), Box::new(consequent))
    }

    pub fn iff(a: Proposition, b: Proposition) -> Self {
        Proposition::Iff(Box::new(a), Box::new(b))
    }

    /// `OR` of `Y[s, disjunct]` over the given stages.
    pub fn any_stage<I: IntoIterator<Item = usize>>(stages: I, disjunct: usize) -> Self {
        Proposition::Or(stages.into_iter().map(|s| Proposition::atom(s, disjunct)).collect())
    }

    /// Checks that every atom refers to an existing (stage, disjunct) pair.
    pub fn validate(&self, disjunct_counts: &[usize]) -> Result<(), LogicError> {
        match self {
            Proposition::Atom { stage, disjunct } => {
                if disjunct_counts.get(*stage).is_some_and(|&c| *disjunct < c) {
                    Ok(())
                } else {
                    Err(LogicError::InvalidAtom { stage: *stage, disjunct: *disjunct })
                }
            }
            Proposition::Not(p) => p.validate(disjunct_counts),
            Proposition::And(ps) | Proposition::Or(ps) | Proposition::ExactlyOne(ps) => {
                ps.iter().try_for_each(|p| p.validate(disjunct_counts))
            }
            Proposition::Implies(a, b) | Proposition::Iff(a, b) => {
                a.validate(disjunct_counts)?;
                b.validate(disjunct_counts)
            }
        }
    }

    /// Truth value under `assignment`.
    pub fn evaluate(&self, assignment: &BooleanAssignment) -> Result<bool, LogicError> {
        Ok(match self {
            Proposition::Atom { stage, disjunct } => match assignment.modes.get(*stage) {
                Some(selected) => selected == disjunct,
                None => {
                    return Err(LogicError::InvalidAtom { stage: *stage, disjunct: *disjunct })
                }
            },
            Proposition::Not(p) => !p.evaluate(assignment)?,
            Proposition::And(ps) => {
                for p in ps {
                    if !p.evaluate(assignment)? {
                        return Ok(false);
                    }
                }
                true
            }
            Proposition::Or(ps) => {
                for p in ps {
                    if p.evaluate(assignment)? {
                        return Ok(true);
                    }
                }
                false
            }
            Proposition::ExactlyOne(ps) => {
                let mut count = 0;
                for p in ps {
                    count += usize::from(p.evaluate(assignment)?);
                }
                count == 1
            }
            Proposition::Implies(a, b) => !a.evaluate(assignment)? || b.evaluate(assignment)?,
            Proposition::Iff(a, b) => a.evaluate(assignment)? == b.evaluate(assignment)?,
        })
    }
}

impl fmt::Display for Proposition {
    /// Prefix notation with one-based atoms, e.g. `(implies (Y 2 2) (or (Y 1 1)))`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn list(f: &mut fmt::Formatter<'_>, head: &str, ps: &[Proposition]) -> fmt::Result {
            write!(f, "({head}")?;
            for p in ps {
                write!(f, " {p}")?;
            }
            write!(f, ")")
        }
        match self {
            Proposition::Atom { stage, disjunct } => write!(f, "(Y {} {})", stage + 1, disjunct + 1),
            Proposition::Not(p) => write!(f, "(not {p})"),
            Proposition::And(ps) => list(f, "and", ps),
            Proposition::Or(ps) => list(f, "or", ps),
            Proposition::ExactlyOne(ps) => list(f, "xor", ps),
            Proposition::Implies(a, b) => write!(f, "(implies {a} {b})"),
            Proposition::Iff(a, b) => write!(f, "(iff {a} {b})"),
        }
    }
}

/// Selected disjunct per stage (zero-based). Exactly one Boolean per stage is
/// true by construction.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
pub struct BooleanAssignment {
    modes: Vec<usize>,
}

impl BooleanAssignment {
    pub fn new(modes: Vec<usize>) -> Self {
        Self { modes }
    }

    /// Builds an assignment from one-based mode numbers, e.g. `[1, 2, 2]`.
    ///
    /// # Panics
    /// If any entry is zero.
    pub fn from_one_based(modes: &[usize]) -> Self {
        Self {
            modes: modes
                .iter()
                .map(|&m| m.checked_sub(1).expect("one-based modes start at 1"))
                .collect(),
        }
    }

    pub fn modes(&self) -> &[usize] {
        &self.modes
    }

    pub fn one_based(&self) -> Vec<usize> {
        self.modes.iter().map(|m| m + 1).collect()
    }

    pub fn n_stages(&self) -> usize {
        self.modes.len()
    }

    /// Value of the Boolean `Y[stage, disjunct]`.
    pub fn is_active(&self, stage: usize, disjunct: usize) -> bool {
        self.modes.get(stage) == Some(&disjunct)
    }

    pub(crate) fn check_against(&self, disjunct_counts: &[usize]) -> Result<(), LogicError> {
        if self.modes.len() != disjunct_counts.len() {
            return Err(LogicError::StageCountMismatch {
                expected: disjunct_counts.len(),
                found: self.modes.len(),
            });
        }
        for (stage, (&m, &c)) in self.modes.iter().zip(disjunct_counts).enumerate() {
            if m >= c {
                return Err(LogicError::InvalidSelection { stage, disjunct: m, available: c });
            }
        }
        Ok(())
    }
}

impl fmt::Display for BooleanAssignment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, m) in self.modes.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{}", m + 1)?;
        }
        write!(f, ")")
    }
}
