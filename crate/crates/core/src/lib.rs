//! Dynamic congestion games where travellers learn hazard states of stochastic
//! paths from each other's reports.
//!
//! The crate is organised bottom-up:
//!
//! * [`congestion`] holds the latency, observation and belief dynamics.
//! * [`scenario`] describes a full game instance.
//! * [`policy`] implements the routing behaviours (myopic, hiding,
//!   deterministic recommendation, CHAR).
//! * [`planner`] solves for the socially optimal policy.
//! * [`sim`] runs seeded episodes and Monte-Carlo summaries.
//! * [`poa`] evaluates price-of-anarchy bounds and worst-case constructions.
//! * [`ingest`] fits Markov chains to labelled data and reads/writes scenarios.

pub mod congestion;
pub mod error;
pub mod ingest;
pub mod planner;
pub mod poa;
pub mod policy;
pub mod presets;
pub mod rng;
pub mod scenario;
pub mod sim;

pub use error::{Error, Result};
