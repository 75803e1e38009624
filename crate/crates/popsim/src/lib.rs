//! Exact stochastic simulation of population protocols and small chemical
//! reaction networks.
//!
//! The crate provides four interchangeable engines over one set of domain
//! types:
//!
//! - a sequential engine applying one uniformly random pairwise interaction
//!   at a time (the ground-truth semantics),
//! - a batched engine that advances ~sqrt(n) interactions per step by
//!   sampling the birthday-collision length exactly,
//! - a null-skipping Gillespie engine over protocols, and a classic
//!   Gillespie SSA over raw reaction networks,
//! - a hybrid scheduler that switches between them per step and records
//!   trajectory snapshots.
//!
//! Reaction networks with unimolecular and bimolecular reactions compile
//! into continuous-time protocols whose configuration distribution at time
//! `m*t` matches the SSA distribution at time `t` ([`compile`]).
//!
//! Text formats for protocols and reaction networks live in [`dsl`];
//! statistical verification helpers in [`stats`].

pub mod batched;
pub mod compile;
pub mod dsl;
mod error;
pub mod gillespie;
pub mod model;
pub mod rng;
pub mod scheduler;
pub mod stats;

pub use error::{Error, Result};
pub use model::{
    enumerate_states, make_configuration, Configuration, Crn, OutputDistribution, Protocol,
    Reaction, ReactionSide, StateId, StateNames, TimeModel, DEFAULT_STATE_CAP,
};
pub use rng::RngStream;
pub use scheduler::{Method, RunSpec, Trajectory};
