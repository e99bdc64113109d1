//! Deterministic discrete-event simulator of a Bitcoin-like peer-to-peer overlay.
//!
//! A run builds an overlay of `C` nodes with one of three peer-selection
//! strategies, drives Poisson transaction and block generation at nodes 2..C,
//! relays everything with inv/getdata gossip over bandwidth-limited links, and
//! records what the passive node 1 sees.

pub mod config;
pub mod error;
pub mod experiment;
pub mod measure;
pub mod net;
pub mod protocol;
pub mod queue;
pub mod rng;
pub mod time;
pub mod topology;
pub mod workload;
pub mod world;

pub use config::{Config, Strategy, CONFIRMATION_DEPTH};
pub use error::{ConfigError, SimError, StatsError, TopologyError};
pub use experiment::{run_cell, run_matrix, CellSummary, ExperimentCell, Matrix, RunOutcome};
pub use measure::{collect, RunData, RunSummary};
pub use time::SimTime;
pub use topology::{NodeId, OverlayGraph};
pub use world::World;
