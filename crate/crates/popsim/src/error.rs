//! Crate-wide error type.

use thiserror::Error;

/// Errors reported by protocol construction, compilation, and the engines.
///
/// Parse errors carry their own source span and live in [`crate::dsl::ParseError`];
/// they are wrapped here so library callers can handle everything uniformly.
#[derive(Debug, Error)]
pub enum Error {
    #[error("state enumeration exceeded the cap of {cap} states")]
    StateCapExceeded { cap: usize },

    #[error("transition callback returned different outputs on repeated calls for ({a}, {b})")]
    NonDeterministicCallback { a: String, b: String },

    #[error("unknown state `{0}`")]
    UnknownState(String),

    #[error("empty population: initial configuration has no agents")]
    EmptyPopulation,

    #[error("rate must be strictly positive, got {0}")]
    NonPositiveRate(f64),

    #[error("volume must be strictly positive, got {0}")]
    NonPositiveVolume(f64),

    #[error("probability {0} is outside its valid range")]
    InvalidProbability(f64),

    #[error("cannot draw {draws} items from an urn holding {population}")]
    DrawsExceedPopulation { draws: u64, population: u64 },

    #[error("population too small: pairwise interactions need at least 2 agents, got {0}")]
    PopulationTooSmall(u64),

    #[error("cannot normalize an empty transition set")]
    EmptyTransitionSet,

    #[error("no applicable interaction: every enabled pair is null")]
    NoApplicableInteraction,

    #[error("target time {0} lies before the current clock")]
    NegativeHorizon(f64),

    #[error("snapshot interval must be strictly positive, got {0}")]
    NonPositiveInterval(f64),

    #[error("discrete time is not supported for compiled reaction networks (time scale m = {0})")]
    DiscreteTimeForCompiledCrn(f64),

    #[error("conflicting transitions supplied for ordered pair ({a}, {b})")]
    ConflictingOrderedRules { a: String, b: String },

    #[error("output probabilities for ({a}, {b}) sum to {sum}, which exceeds 1")]
    ProbabilityOverflow { a: String, b: String, sum: f64 },

    #[error(transparent)]
    Parse(#[from] crate::dsl::ParseError),
}

pub type Result<T> = std::result::Result<T, Error>;
