//! Logic-based discrete-steepest-descent for multi-stage dynamic
//! optimization with mode switching.
//!
//! A model ([`model::DagdpModel`]) holds stages, alternative dynamic modes
//! per stage and logic propositions over the mode selections. Each fixed mode
//! schedule is transcribed by Radau collocation ([`transcription`]) and solved
//! locally ([`nlp`]). Schedules are encoded as integer lattice points
//! ([`external`]) and explored by neighbor and line search ([`search`]).
//! [`bench`] holds the two mode-switching benchmarks and the result writers.

pub mod bench;
pub mod expr;
pub mod external;
pub mod model;
pub mod nlp;
pub mod search;
pub mod transcription;
