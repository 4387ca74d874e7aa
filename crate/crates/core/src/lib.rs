//! Diffusion learning of a changing hidden state over a network of agents.
//!
//! Agents observe private signals, run a local inference step and combine
//! their neighbours' beliefs geometrically. The crate provides the belief
//! models, combination matrices, the update strategies, the log-ratio
//! dynamics used for steady-state analysis, and a seeded simulation engine.

pub mod dynamics;
pub mod error;
pub mod model;
pub mod network;
pub mod numeric;
pub mod rng;
pub mod sim;
pub mod strategies;

pub use error::{Error, Result};
pub use model::{
    bound_c, identifiability, kl_divergence, Belief, Distribution, IdentifiabilityIssue,
    IdentifiabilityTable, LikelihoodModel, Observation, StateSpace, TrueModel,
};
pub use network::{generate, Diagnostics, Network, PerronVector, Topology};
pub use sim::{
    run, sweep, RecordOptions, SimConfig, SimResult, StrategyOutcome, SweepCell, SweepSpec,
    TruthProcess,
};
pub use strategies::Strategy;
